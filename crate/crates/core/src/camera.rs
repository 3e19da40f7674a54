//! Detector model: quantum-efficiency thinning, electron-multiplying gain
//! and additive Gaussian read noise, quantized to unsigned gray levels.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Below this count, binomial thinning is done photon by photon.
const BERNOULLI_THINNING_MAX: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainMode {
    /// Gray level `A*k + noise`.
    #[default]
    Deterministic,
    /// Each photoelectron contributes an exponential gain of mean `A`.
    Stochastic,
}

impl FromStr for GainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(GainMode::Deterministic),
            "stochastic" => Ok(GainMode::Stochastic),
            other => Err(Error::invalid(
                "gain_mode",
                format!("`{other}` is not one of deterministic, stochastic"),
            )),
        }
    }
}

impl fmt::Display for GainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GainMode::Deterministic => "deterministic",
            GainMode::Stochastic => "stochastic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    /// Probability that a photon yields a photoelectron.
    pub quantum_efficiency: f64,
    /// Gray levels per photoelectron (`A`).
    pub gain: f64,
    /// Mean of the electronic noise in gray levels (`x0`, also `mu0`).
    pub noise_mean: f64,
    /// Standard deviation of the electronic noise in gray levels.
    pub noise_std: f64,
    pub pixel_pitch_um: f64,
    pub bit_depth: u32,
    pub gain_mode: GainMode,
}

impl Default for CameraModel {
    /// Detector constants of an iXon Ultra 897 class EMCCD. The gain is a
    /// free parameter and defaults to 100 gray levels per photoelectron.
    fn default() -> Self {
        Self {
            quantum_efficiency: 0.7,
            gain: 100.0,
            noise_mean: 167.0,
            noise_std: 32.0,
            pixel_pitch_um: 16.0,
            bit_depth: 16,
            gain_mode: GainMode::Deterministic,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.quantum_efficiency) {
            return Err(Error::invalid(
                "quantum_efficiency",
                format!("{} outside [0, 1]", self.quantum_efficiency),
            ));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::invalid("gain", format!("{} is not > 0", self.gain)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std", format!("{} is not >= 0", self.noise_std)));
        }
        if !self.noise_mean.is_finite() {
            return Err(Error::invalid("noise_mean", "must be finite"));
        }
        if !(self.pixel_pitch_um > 0.0 && self.pixel_pitch_um.is_finite()) {
            return Err(Error::invalid("pixel_pitch_um", "must be > 0"));
        }
        if !(1..=16).contains(&self.bit_depth) {
            return Err(Error::invalid("bit_depth", format!("{} outside 1..=16", self.bit_depth)));
        }
        Ok(())
    }

    /// Largest representable gray level.
    pub fn max_gray(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }

    /// Expected gray level above the noise floor for a mean photon count.
    pub fn mean_signal(&self, photons: f64) -> f64 {
        self.gain * self.quantum_efficiency * photons
    }

    /// Quantization used for every output value: round half up, then clamp.
    /// Returns the gray level and whether clamping occurred.
    #[inline]
    pub fn quantize(&self, value: f64) -> (u16, bool) {
        let max = self.max_gray() as f64;
        let rounded = (value + 0.5).floor();
        if rounded < 0.0 {
            (0, true)
        } else if rounded > max {
            (max as u16, true)
        } else {
            (rounded as u16, false)
        }
    }
}

/// Binomial thinning of a photon count with retention probability `p`.
#[inline]
pub fn thin<R: Rng + ?Sized>(count: u32, p: f64, rng: &mut R) -> u32 {
    if count == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return count;
    }
    if count <= BERNOULLI_THINNING_MAX {
        (0..count).filter(|_| rng.random::<f64>() < p).count() as u32
    } else {
        Binomial::new(count as u64, p)
            .expect("p checked in (0, 1)")
            .sample(rng) as u32
    }
}

/// Converts photon counts to photoelectrons.
pub fn detect<R: Rng + ?Sized>(counts: &[u32], camera: &CameraModel, rng: &mut R) -> Vec<u32> {
    counts
        .iter()
        .map(|&k| thin(k, camera.quantum_efficiency, rng))
        .collect()
}

/// Amplifies photoelectrons into a gray-level frame; returns the number of
/// clamped pixels.
pub fn amplify_into<R: Rng + ?Sized>(
    electrons: &[u32],
    camera: &CameraModel,
    rng: &mut R,
    out: &mut [u16],
) -> u64 {
    assert_eq!(electrons.len(), out.len());
    let mut clamped = 0;
    for (o, &k) in out.iter_mut().zip(electrons) {
        let signal = match camera.gain_mode {
            GainMode::Deterministic => camera.gain * k as f64,
            GainMode::Stochastic if k == 0 => 0.0,
            GainMode::Stochastic => Gamma::new(k as f64, camera.gain)
                .expect("shape and scale are positive")
                .sample(rng),
        };
        let noise = if camera.noise_std > 0.0 {
            camera.noise_std * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let (v, c) = camera.quantize(camera.noise_mean + signal + noise);
        *o = v;
        clamped += c as u64;
    }
    clamped
}

pub fn amplify<R: Rng + ?Sized>(electrons: &[u32], camera: &CameraModel, rng: &mut R) -> (Vec<u16>, u64) {
    let mut out = vec![0u16; electrons.len()];
    let clamped = amplify_into(electrons, camera, rng, &mut out);
    (out, clamped)
}
