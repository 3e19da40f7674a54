//! Experiment configuration files.
//!
//! ```toml
//! [scene]
//! quantum_mask = "cat.pgm"      # amplitude transmittance, relative to this file
//! classical_mask = "dog.pgm"
//! pair_rate = 20000             # pairs per frame, 0 turns the pair arm off
//! correlation_width_um = 8.0
//! classical_photons = 1.5       # photons per pixel per frame
//!
//! [camera]
//! gain = 100
//!
//! [run]
//! frames = 200000
//! seed = 7
//! window_radius = 5
//! ```
//!
//! Without masks, `width` and `height` give the sensor size. Unknown keys
//! are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::camera::{CameraModel, GainMode};
use crate::distill::DistillOptions;
use crate::error::{Error, Result};
use crate::export::read_pgm;
use crate::image::Grid;
use crate::optics::{ClassicalSource, ObjectMask, PairSource};
use crate::simulate::{ClassicalArm, PairArm, Scene};
use crate::snr::SweepSettings;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scene: RawScene,
    #[serde(default)]
    camera: RawCamera,
    run: RawRun,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    width: Option<usize>,
    height: Option<usize>,
    quantum_mask: Option<PathBuf>,
    classical_mask: Option<PathBuf>,
    #[serde(default)]
    pair_rate: f64,
    #[serde(default = "default_correlation_width")]
    correlation_width_um: f64,
    #[serde(default)]
    classical_photons: f64,
}

fn default_correlation_width() -> f64 {
    8.0
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCamera {
    quantum_efficiency: Option<f64>,
    gain: Option<f64>,
    noise_mean: Option<f64>,
    noise_std: Option<f64>,
    pixel_pitch_um: Option<f64>,
    bit_depth: Option<u32>,
    gain_mode: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    frames: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_window")]
    window_radius: usize,
    #[serde(default = "default_exposure")]
    exposure_ms: f32,
    #[serde(default = "default_peak")]
    peak_radius: usize,
    #[serde(default = "default_exclusion")]
    exclusion_radius: usize,
    #[serde(default = "default_quantile")]
    calibration_quantile: f64,
}

fn default_window() -> usize {
    5
}
fn default_exposure() -> f32 {
    1.0
}
fn default_peak() -> usize {
    1
}
fn default_exclusion() -> usize {
    3
}
fn default_quantile() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub frames: u64,
    pub seed: u64,
    pub window_radius: usize,
    pub exposure_ms: f32,
    pub peak_radius: usize,
    pub exclusion_radius: usize,
    pub calibration_quantile: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scene: Scene,
    pub camera: CameraModel,
    pub run: RunSettings,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn load_mask(base: &Path, rel: &Path) -> Result<ObjectMask> {
    let pgm = read_pgm(base.join(rel)).map_err(config_err)?;
    ObjectMask::new(pgm.grid, pgm.normalized())
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses configuration text; mask paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(config_err)?;
        let s = raw.scene;

        let quantum_mask = s.quantum_mask.as_deref().map(|p| load_mask(base, p)).transpose()?;
        let classical_mask = s.classical_mask.as_deref().map(|p| load_mask(base, p)).transpose()?;
        let mut grid = match (s.width, s.height) {
            (Some(w), Some(h)) => Some(Grid::new(w, h)?),
            (None, None) => None,
            _ => return Err(Error::Config("scene needs both width and height".into())),
        };
        for mask in quantum_mask.iter().chain(&classical_mask) {
            match grid {
                Some(g) => g.ensure_same(mask.grid())?,
                None => grid = Some(mask.grid()),
            }
        }
        let grid = grid.ok_or_else(|| Error::Config("scene needs a mask or width and height".into()))?;

        let check = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{v} is not a finite value >= 0")))
            }
        };
        check("pair_rate", s.pair_rate)?;
        check("classical_photons", s.classical_photons)?;
        let pair = if s.pair_rate > 0.0 {
            Some(PairArm {
                source: PairSource::uniform(grid, s.pair_rate, s.correlation_width_um)?,
                mask: quantum_mask.unwrap_or_else(|| ObjectMask::transparent(grid)),
            })
        } else {
            None
        };
        let classical = if s.classical_photons > 0.0 {
            Some(ClassicalArm {
                source: ClassicalSource::uniform(grid, s.classical_photons)?,
                mask: classical_mask.unwrap_or_else(|| ObjectMask::transparent(grid)),
            })
        } else {
            None
        };
        let scene = Scene::new(grid, pair, classical)?;

        let c = raw.camera;
        let d = CameraModel::default();
        let camera = CameraModel {
            quantum_efficiency: c.quantum_efficiency.unwrap_or(d.quantum_efficiency),
            gain: c.gain.unwrap_or(d.gain),
            noise_mean: c.noise_mean.unwrap_or(d.noise_mean),
            noise_std: c.noise_std.unwrap_or(d.noise_std),
            pixel_pitch_um: c.pixel_pitch_um.unwrap_or(d.pixel_pitch_um),
            bit_depth: c.bit_depth.unwrap_or(d.bit_depth),
            gain_mode: c.gain_mode.as_deref().map(str::parse).transpose()?.unwrap_or(GainMode::default()),
        };
        camera.validate()?;

        let r = raw.run;
        if r.frames < 2 {
            return Err(Error::TooFewFrames(r.frames));
        }
        if r.window_radius == 0 {
            return Err(Error::invalid("window_radius", "must be >= 1"));
        }
        if !(r.exposure_ms > 0.0 && r.exposure_ms.is_finite()) {
            return Err(Error::invalid("exposure_ms", "must be > 0"));
        }
        if r.exclusion_radius <= r.peak_radius || r.exclusion_radius >= r.window_radius.max(1) {
            return Err(Error::invalid(
                "exclusion_radius",
                format!(
                    "need peak_radius < exclusion_radius < window_radius, got {} / {} / {}",
                    r.peak_radius, r.exclusion_radius, r.window_radius
                ),
            ));
        }
        let run = RunSettings {
            frames: r.frames,
            seed: r.seed,
            window_radius: r.window_radius,
            exposure_ms: r.exposure_ms,
            peak_radius: r.peak_radius,
            exclusion_radius: r.exclusion_radius,
            calibration_quantile: r.calibration_quantile,
        };
        run.distill_options().validate()?;
        Ok(Self { scene, camera, run })
    }

    pub fn grid(&self) -> Grid {
        self.scene.grid()
    }

    /// Sweep over a homogeneous version of the scene with the same pair
    /// intensity.
    pub fn sweep_settings(&self) -> Result<SweepSettings> {
        let pair = self
            .scene
            .pair()
            .ok_or_else(|| Error::Config("an SNR sweep needs pair_rate > 0".into()))?;
        let grid = self.grid();
        let quantum_signal =
            2.0 * pair.source.mean_pair_rate() * self.camera.gain * self.camera.quantum_efficiency / grid.len() as f64;
        Ok(SweepSettings {
            grid,
            quantum_signal,
            correlation_width_um: pair.source.correlation_width_um(),
            window_radius: self.run.window_radius,
            n_frames: self.run.frames,
            peak_radius: self.run.peak_radius,
            exclusion_radius: self.run.exclusion_radius,
        })
    }
}

impl RunSettings {
    pub fn distill_options(&self) -> DistillOptions {
        DistillOptions {
            calibration_quantile: self.calibration_quantile,
            ..DistillOptions::default()
        }
    }
}
