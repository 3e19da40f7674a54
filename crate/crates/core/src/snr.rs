//! Signal-to-noise ratio of the pair peak: measurement on minus-coordinate
//! projections, the analytic model and its fit, and illumination sweeps.

use crate::camera::CameraModel;
use crate::correlator::{finalize_gamma, Accumulator, MinusCoordinateMap};
use crate::error::{Error, Result};
use crate::image::Grid;
use crate::optics::{ClassicalSource, ObjectMask, PairSource};
use crate::simulate::{pair_rate_for_mean_gray, simulate_stack, ClassicalArm, PairArm, Scene};

/// Minimum number of samples in the noise region.
pub const MIN_NOISE_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrMeasurement {
    pub peak: f64,
    pub noise_std: f64,
    pub noise_samples: usize,
    /// `peak / noise_std`; infinite when the noise vanishes.
    pub snr: f64,
}

impl SnrMeasurement {
    pub fn is_infinite(&self) -> bool {
        self.snr.is_infinite()
    }

    /// Approximate one-sigma error of the SNR: one noise unit on the peak
    /// plus the sampling error of the estimated standard deviation.
    pub fn standard_error(&self) -> f64 {
        (1.0 + self.snr * self.snr / (2.0 * (self.noise_samples as f64 - 1.0))).sqrt()
    }
}

/// Peak over `|d| <= peak_radius` divided by the standard deviation of the
/// map over `|d| > exclusion_radius` (Chebyshev norm).
pub fn measure_snr(map: &MinusCoordinateMap, peak_radius: usize, exclusion_radius: usize) -> Result<SnrMeasurement> {
    if exclusion_radius <= peak_radius {
        return Err(Error::invalid(
            "exclusion_radius",
            format!("{exclusion_radius} is not above the peak radius {peak_radius}"),
        ));
    }
    let peak = map
        .iter()
        .filter(|(o, _)| o.radius() as usize <= peak_radius)
        .map(|(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let noise: Vec<f64> = map
        .iter()
        .filter(|(o, _)| o.radius() as usize > exclusion_radius)
        .map(|(_, v)| v)
        .collect();
    if noise.len() < MIN_NOISE_SAMPLES {
        return Err(Error::invalid(
            "exclusion_radius",
            format!(
                "leaves {} noise samples in a radius-{} map, need {MIN_NOISE_SAMPLES}",
                noise.len(),
                map.radius()
            ),
        ));
    }
    let n = noise.len() as f64;
    let mean = noise.iter().sum::<f64>() / n;
    let noise_std = (noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let snr = if noise_std > 0.0 { peak / noise_std } else { f64::INFINITY };
    Ok(SnrMeasurement {
        peak,
        noise_std,
        noise_samples: noise.len(),
        snr,
    })
}

/// Inputs of the SNR model. Intensities are mean gray levels; `i_qu`
/// includes the noise floor `mu0`, `i_cl` does not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelInputs {
    pub n_frames: f64,
    pub eta: f64,
    pub sigma0: f64,
    pub mu0: f64,
    pub i_qu: f64,
    pub i_cl: f64,
}

impl ModelInputs {
    fn check(&self) -> Result<()> {
        if !(self.i_qu > self.mu0) {
            return Err(Error::ModelDomain(format!(
                "I_qu = {} does not exceed mu0 = {}",
                self.i_qu, self.mu0
            )));
        }
        if !(self.n_frames >= 1.0) {
            return Err(Error::ModelDomain(format!("N = {} < 1", self.n_frames)));
        }
        if !(self.eta > 0.0 && self.i_cl >= 0.0) {
            return Err(Error::ModelDomain("eta must be > 0 and I_cl >= 0".into()));
        }
        Ok(())
    }

    /// `sqrt(N) eta / 2`.
    fn scale(&self) -> f64 {
        self.n_frames.sqrt() * self.eta / 2.0
    }

    /// `sigma0^2 + I_cl` over `I_qu - mu0`.
    fn background(&self) -> f64 {
        (self.sigma0 * self.sigma0 + self.i_cl) / (self.i_qu - self.mu0)
    }
}

/// `SNR = alpha (sqrt(N) eta / 2) / (1 + (sigma0^2 + I_cl) / (beta (I_qu - mu0)))`.
pub fn snr_model(inputs: &ModelInputs, alpha: f64, beta: f64) -> Result<f64> {
    inputs.check()?;
    if !(beta > 0.0) {
        return Err(Error::ModelDomain(format!("beta = {beta} is not > 0")));
    }
    Ok(alpha * inputs.scale() / (1.0 + inputs.background() / beta))
}

/// One measured point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrPoint {
    /// Classical over quantum gray level, both above the noise floor.
    pub ratio: f64,
    pub measured_snr: f64,
    /// Mean quantum gray level including the floor.
    pub i_qu: f64,
    /// Mean classical gray level above the floor.
    pub i_cl: f64,
    pub n_frames: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrModelFit {
    pub alpha: f64,
    pub alpha_se: f64,
    pub beta: f64,
    pub beta_se: f64,
    pub r_squared: f64,
    pub residual_sum_squares: f64,
    pub eta: f64,
    pub sigma0: f64,
    pub mu0: f64,
}

impl SnrModelFit {
    pub fn predict(&self, n_frames: f64, i_qu: f64, i_cl: f64) -> Result<f64> {
        let inputs = ModelInputs {
            n_frames,
            eta: self.eta,
            sigma0: self.sigma0,
            mu0: self.mu0,
            i_qu,
            i_cl,
        };
        snr_model(&inputs, self.alpha, self.beta)
    }
}

const LOG_BETA_RANGE: (f64, f64) = (-6.0, 6.0);
const GRID_STEPS: usize = 480;

/// Least-squares fit of `(alpha, beta)` with relative weights
/// `1 / max(|snr|, 1)^2`: above one, the error of a measured SNR grows in
/// proportion to it. The model is linear in `alpha`, so
/// each candidate `beta` gets its optimal `alpha` in closed form; `beta` is
/// located on a log grid and refined by golden-section search.
pub fn fit_model(points: &[SnrPoint], eta: f64, sigma0: f64, mu0: f64) -> Result<SnrModelFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("{} points, need at least 3", points.len())));
    }
    let mut ratios: Vec<f64> = points.iter().map(|p| p.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    if ratios.len() < 2 {
        return Err(Error::Fit("all points share one ratio".into()));
    }
    let mut s = Vec::with_capacity(points.len());
    let mut a = Vec::with_capacity(points.len());
    for p in points {
        let inputs = ModelInputs {
            n_frames: p.n_frames as f64,
            eta,
            sigma0,
            mu0,
            i_qu: p.i_qu,
            i_cl: p.i_cl,
        };
        inputs.check()?;
        if !p.measured_snr.is_finite() {
            return Err(Error::Fit(format!("non-finite SNR at ratio {}", p.ratio)));
        }
        s.push(inputs.scale());
        a.push(inputs.background());
    }
    let y: Vec<f64> = points.iter().map(|p| p.measured_snr).collect();
    let w: Vec<f64> = y.iter().map(|v| 1.0 / v.abs().max(1.0).powi(2)).collect();
    let a_spread = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - a.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(a_spread > 0.0) {
        return Err(Error::Fit("points do not vary in background term".into()));
    }

    // Residual sum of squares and optimal alpha at log10(beta) = lb.
    let profile = |lb: f64| -> (f64, f64) {
        let beta = 10f64.powf(lb);
        let (mut fy, mut ff) = (0.0, 0.0);
        for i in 0..y.len() {
            let f = s[i] / (1.0 + a[i] / beta);
            fy += w[i] * f * y[i];
            ff += w[i] * f * f;
        }
        let alpha = fy / ff;
        let rss = (0..y.len())
            .map(|i| w[i] * (y[i] - alpha * s[i] / (1.0 + a[i] / beta)).powi(2))
            .sum();
        (rss, alpha)
    };

    let (lo, hi) = LOG_BETA_RANGE;
    let step = (hi - lo) / GRID_STEPS as f64;
    let best = (0..=GRID_STEPS)
        .map(|k| (k, profile(lo + k as f64 * step).0))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("nonempty grid")
        .0;
    if best == 0 || best == GRID_STEPS {
        return Err(Error::Fit(format!(
            "beta runs to the edge of [1e{lo}, 1e{hi}] (rss {:.4e}); the data do not constrain it",
            profile(lo + best as f64 * step).0
        )));
    }
    let (mut x0, mut x3) = (lo + (best - 1) as f64 * step, lo + (best + 1) as f64 * step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = x3 - g * (x3 - x0);
    let mut x2 = x0 + g * (x3 - x0);
    let (mut f1, mut f2) = (profile(x1).0, profile(x2).0);
    for _ in 0..200 {
        if x3 - x0 < 1e-13 {
            break;
        }
        if f1 <= f2 {
            x3 = x2;
            x2 = x1;
            f2 = f1;
            x1 = x3 - g * (x3 - x0);
            f1 = profile(x1).0;
        } else {
            x0 = x1;
            x1 = x2;
            f1 = f2;
            x2 = x0 + g * (x3 - x0);
            f2 = profile(x2).0;
        }
    }
    let lb = (x0 + x3) / 2.0;
    let (rss, alpha) = profile(lb);
    let beta = 10f64.powf(lb);

    // Standard errors from the Jacobian at the optimum.
    let (mut jaa, mut jab, mut jbb) = (0.0, 0.0, 0.0);
    for i in 0..y.len() {
        let den = 1.0 + a[i] / beta;
        let da = s[i] / den;
        let db = alpha * s[i] * a[i] / (beta * beta * den * den);
        jaa += w[i] * da * da;
        jab += w[i] * da * db;
        jbb += w[i] * db * db;
    }
    let det = jaa * jbb - jab * jab;
    let dof = y.len().saturating_sub(2).max(1) as f64;
    let s2 = rss / dof;
    let (alpha_se, beta_se) = if det > 0.0 {
        ((s2 * jbb / det).sqrt(), (s2 * jaa / det).sqrt())
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    // Plain coefficient of determination of the weighted optimum.
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let plain_rss: f64 = (0..y.len())
        .map(|i| (y[i] - alpha * s[i] / (1.0 + a[i] / beta)).powi(2))
        .sum();
    let r_squared = if tss > 0.0 { 1.0 - plain_rss / tss } else { 1.0 };
    if !(alpha > 0.0) {
        return Err(Error::Fit(format!("alpha = {alpha} is not positive")));
    }
    Ok(SnrModelFit {
        alpha,
        alpha_se,
        beta,
        beta_se,
        r_squared,
        residual_sum_squares: plain_rss,
        eta,
        sigma0,
        mu0,
    })
}

/// Homogeneous scene used for sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub grid: Grid,
    /// Quantum gray level above the floor.
    pub quantum_signal: f64,
    pub correlation_width_um: f64,
    pub window_radius: usize,
    pub n_frames: u64,
    pub peak_radius: usize,
    pub exclusion_radius: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub point: SnrPoint,
    pub measurement: SnrMeasurement,
    pub map: MinusCoordinateMap,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    /// `None` when fewer than two distinct ratios were swept.
    pub fit: Option<Result<SnrModelFit>>,
}

/// Random seed of sweep point `index`.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Simulates, correlates and measures one homogeneous stack.
pub fn measure_point(settings: &SweepSettings, camera: &CameraModel, ratio: f64, seed: u64) -> Result<SweepPoint> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::invalid("ratio", format!("{ratio} is not a finite value >= 0")));
    }
    let grid = settings.grid;
    let rate = pair_rate_for_mean_gray(grid, camera, camera.noise_mean + settings.quantum_signal)?;
    let pair = PairArm {
        source: PairSource::uniform(grid, rate, settings.correlation_width_um)?,
        mask: ObjectMask::transparent(grid),
    };
    let i_cl = ratio * settings.quantum_signal;
    let classical = (ratio > 0.0)
        .then(|| -> Result<ClassicalArm> {
            let photons = i_cl / (camera.gain * camera.quantum_efficiency);
            Ok(ClassicalArm {
                source: ClassicalSource::uniform(grid, photons)?,
                mask: ObjectMask::transparent(grid),
            })
        })
        .transpose()?;
    let scene = Scene::new(grid, Some(pair), classical)?;
    let mut acc = Accumulator::new(grid, settings.window_radius)?;
    simulate_stack(&scene, camera, settings.n_frames, seed, &mut acc)?;
    let res = finalize_gamma(&acc.finish())?;
    let map = res.minus_projection();
    let measurement = measure_snr(&map, settings.peak_radius, settings.exclusion_radius)?;
    Ok(SweepPoint {
        point: SnrPoint {
            ratio,
            measured_snr: measurement.snr,
            i_qu: camera.noise_mean + settings.quantum_signal,
            i_cl,
            n_frames: settings.n_frames,
        },
        measurement,
        map,
    })
}

/// Measures every ratio, then fits the model when the ratios allow it.
pub fn snr_sweep(settings: &SweepSettings, camera: &CameraModel, ratios: &[f64], seed: u64) -> Result<SweepOutcome> {
    if ratios.is_empty() {
        return Err(Error::invalid("ratios", "empty list"));
    }
    let points = ratios
        .iter()
        .enumerate()
        .map(|(i, &r)| measure_point(settings, camera, r, point_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let mut distinct: Vec<f64> = ratios.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let fit = (distinct.len() >= 2 && points.len() >= 3).then(|| {
        let pts: Vec<SnrPoint> = points.iter().map(|p| p.point.clone()).collect();
        fit_model(&pts, camera.quantum_efficiency, camera.noise_std, camera.noise_mean)
    });
    Ok(SweepOutcome { points, fit })
}
