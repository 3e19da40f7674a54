//! Frame-stack simulation of the mixed quantum/classical scene.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::{amplify_into, thin, CameraModel};
use crate::error::{Error, Result};
use crate::image::{Grid, Image, Pixel};
use crate::optics::{transmit_pair, ClassicalEmitter, ClassicalSource, ObjectMask, Origin, PairSource, PhotonRecord};
use crate::stack::FrameSink;

/// Frames generated per worker between ordered writes.
const FRAMES_PER_JOB: usize = 32;

/// Photon-pair arm: source imaged through object `O1`.
#[derive(Debug, Clone)]
pub struct PairArm {
    pub source: PairSource,
    pub mask: ObjectMask,
}

/// Classical arm: uncorrelated light through object `O2`.
#[derive(Debug, Clone)]
pub struct ClassicalArm {
    pub source: ClassicalSource,
    pub mask: ObjectMask,
}

#[derive(Debug, Clone)]
pub struct Scene {
    grid: Grid,
    pair: Option<PairArm>,
    classical: Option<ClassicalArm>,
}

/// Noise-free reference images of a scene.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// `|O1|^4` on the pair arm, zero when the arm is off.
    pub object_fourth: Image,
    /// Expected classical gray level above the noise floor.
    pub classical: Image,
    /// Expected pair-arm gray level above the noise floor, counting every
    /// transmitted photon regardless of its partner.
    pub quantum_direct: Image,
}

impl Scene {
    pub fn new(grid: Grid, pair: Option<PairArm>, classical: Option<ClassicalArm>) -> Result<Self> {
        if let Some(arm) = &pair {
            grid.ensure_same(arm.source.grid())?;
            grid.ensure_same(arm.mask.grid())?;
        }
        if let Some(arm) = &classical {
            grid.ensure_same(arm.source.grid())?;
            grid.ensure_same(arm.mask.grid())?;
        }
        Ok(Self {
            grid,
            pair,
            classical,
        })
    }

    pub fn dark(grid: Grid) -> Self {
        Self {
            grid,
            pair: None,
            classical: None,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn pair(&self) -> Option<&PairArm> {
        self.pair.as_ref()
    }

    pub fn classical(&self) -> Option<&ClassicalArm> {
        self.classical.as_ref()
    }

    pub fn ground_truth(&self, camera: &CameraModel) -> GroundTruth {
        let g = self.grid;
        let gain = camera.gain * camera.quantum_efficiency;
        let (object_fourth, quantum_direct) = match &self.pair {
            Some(arm) => {
                let t = arm.mask.amplitudes();
                let pm = arm.source.marginal();
                let rate = arm.source.mean_pair_rate();
                (
                    Image::from_fn(g, |x, y| t[g.index(x, y)].powi(4)),
                    Image::from_fn(g, |x, y| {
                        let i = g.index(x, y);
                        gain * 2.0 * rate * pm[i] * t[i] * t[i]
                    }),
                )
            }
            None => (Image::zeros(g), Image::zeros(g)),
        };
        let classical = match &self.classical {
            Some(arm) => {
                let t = arm.mask.amplitudes();
                let mean = arm.source.mean_intensity();
                Image::from_fn(g, |x, y| {
                    let i = g.index(x, y);
                    gain * mean[i] * t[i] * t[i]
                })
            }
            None => Image::zeros(g),
        };
        GroundTruth {
            object_fourth,
            classical,
            quantum_direct,
        }
    }
}

/// Mean pair rate giving a uniformly illuminated sensor a mean gray level of
/// `mean_gray` (noise floor included).
pub fn pair_rate_for_mean_gray(grid: Grid, camera: &CameraModel, mean_gray: f64) -> Result<f64> {
    let above = mean_gray - camera.noise_mean;
    if above <= 0.0 {
        return Err(Error::invalid(
            "mean_gray",
            format!("{mean_gray} is not above the noise floor {}", camera.noise_mean),
        ));
    }
    Ok(above * grid.len() as f64 / (2.0 * camera.gain * camera.quantum_efficiency))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhotonTally {
    pub pair_both: u64,
    pub pair_single: u64,
    pub classical: u64,
}

impl PhotonTally {
    fn add(&mut self, other: &PhotonTally) {
        self.pair_both += other.pair_both;
        self.pair_single += other.pair_single;
        self.classical += other.classical;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub n_frames: u64,
    pub mean_gray: f64,
    pub clamped_pixels: u64,
    /// Photons reaching the sensor, before quantum-efficiency thinning.
    pub photons: PhotonTally,
}

/// Random stream of one frame: ChaCha keyed by the run seed, one stream per
/// frame index.
pub fn frame_rng(seed: u64, frame_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_index);
    rng
}

struct Scratch {
    pairs: Vec<(Pixel, Pixel)>,
    records: Vec<PhotonRecord>,
    counts: Vec<u32>,
}

struct Prepared<'a> {
    scene: &'a Scene,
    camera: &'a CameraModel,
    classical: Option<ClassicalEmitter>,
}

struct FrameOutput {
    frame: Vec<u16>,
    clamped: u64,
    photons: PhotonTally,
}

impl Prepared<'_> {
    fn frame(&self, seed: u64, index: u64, scratch: &mut Scratch) -> FrameOutput {
        let mut rng = frame_rng(seed, index);
        let grid = self.scene.grid;
        scratch.records.clear();
        if let Some(arm) = &self.scene.pair {
            arm.source
                .sample_pairs_into(self.camera.pixel_pitch_um, &mut rng, &mut scratch.pairs);
            for &pair in &scratch.pairs {
                scratch
                    .records
                    .extend(transmit_pair(pair, &arm.mask, &mut rng).records());
            }
        }
        if let Some(emitter) = &self.classical {
            emitter.sample_into(&mut rng, &mut scratch.records);
        }

        let mut photons = PhotonTally::default();
        scratch.counts.clear();
        scratch.counts.resize(grid.len(), 0);
        for r in &scratch.records {
            scratch.counts[grid.index(r.pixel.x, r.pixel.y)] += 1;
            match r.origin {
                Origin::PairBoth => photons.pair_both += 1,
                Origin::PairSingle => photons.pair_single += 1,
                Origin::Classical => photons.classical += 1,
            }
        }
        for c in scratch.counts.iter_mut() {
            *c = thin(*c, self.camera.quantum_efficiency, &mut rng);
        }
        let mut frame = vec![0u16; grid.len()];
        let clamped = amplify_into(&scratch.counts, self.camera, &mut rng, &mut frame);
        FrameOutput {
            frame,
            clamped,
            photons,
        }
    }
}

/// Simulates `n_frames` frames and writes them to `sink` in order.
///
/// Frames are generated in parallel on the current rayon pool; each frame
/// draws from its own random stream so the output does not depend on the
/// thread count.
pub fn simulate_stack<S: FrameSink + ?Sized>(
    scene: &Scene,
    camera: &CameraModel,
    n_frames: u64,
    seed: u64,
    sink: &mut S,
) -> Result<SimulationSummary> {
    camera.validate()?;
    if n_frames < 2 {
        return Err(Error::TooFewFrames(n_frames));
    }
    let classical = scene
        .classical
        .as_ref()
        .map(|arm| ClassicalEmitter::new(&arm.source, &arm.mask))
        .transpose()?;
    let prepared = Prepared {
        scene,
        camera,
        classical,
    };

    let job = (FRAMES_PER_JOB * rayon::current_num_threads()) as u64;
    let mut clamped = 0u64;
    let mut gray_sum = 0u128;
    let mut photons = PhotonTally::default();
    let mut start = 0u64;
    while start < n_frames {
        let end = (start + job).min(n_frames);
        let outputs: Vec<FrameOutput> = (start..end)
            .into_par_iter()
            .map_init(
                || Scratch {
                    pairs: Vec::new(),
                    records: Vec::new(),
                    counts: Vec::new(),
                },
                |scratch, i| prepared.frame(seed, i, scratch),
            )
            .collect();
        for out in outputs {
            sink.write_frame(&out.frame)?;
            clamped += out.clamped;
            gray_sum += out.frame.iter().map(|&v| v as u128).sum::<u128>();
            photons.add(&out.photons);
        }
        start = end;
    }
    Ok(SimulationSummary {
        n_frames,
        mean_gray: gray_sum as f64 / (n_frames as f64 * scene.grid.len() as f64),
        clamped_pixels: clamped,
        photons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::FrameStack;

    fn grid(n: usize) -> Grid {
        Grid::new(n, n).unwrap()
    }

    fn pixel_moments(stack: &FrameStack) -> (Vec<f64>, Vec<f64>) {
        let g = stack.grid();
        let n = stack.n_frames() as f64;
        let mut s = vec![0.0; g.len()];
        let mut s2 = vec![0.0; g.len()];
        for f in stack.frames() {
            for (i, &v) in f.iter().enumerate() {
                s[i] += v as f64;
                s2[i] += (v as f64).powi(2);
            }
        }
        let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
        let var = s2.iter().zip(&mean).map(|(v, m)| v / n - m * m).collect();
        (mean, var)
    }

    #[test]
    fn dark_scene_is_read_noise() {
        let g = grid(4);
        let cam = CameraModel::default();
        let mut stack = FrameStack::new(g, 6.0);
        let summary = simulate_stack(&Scene::dark(g), &cam, 20_000, 1, &mut stack).unwrap();
        assert_eq!(summary.clamped_pixels, 0);
        assert_eq!(summary.photons, PhotonTally::default());
        let (mean, var) = pixel_moments(&stack);
        for (m, v) in mean.iter().zip(&var) {
            // Standard error of the mean is 32/sqrt(2e4) = 0.23 gl.
            assert!((m - 167.0).abs() < 1.0, "{m}");
            assert!((v.sqrt() - 32.0).abs() < 0.8, "{}", v.sqrt());
        }
    }

    #[test]
    fn rejects_single_frame_and_mismatched_grids() {
        let g = grid(4);
        let cam = CameraModel::default();
        let mut stack = FrameStack::new(g, 6.0);
        assert!(matches!(
            simulate_stack(&Scene::dark(g), &cam, 1, 0, &mut stack),
            Err(Error::TooFewFrames(1))
        ));
        let arm = PairArm {
            source: PairSource::uniform(g, 1.0, 10.0).unwrap(),
            mask: ObjectMask::transparent(grid(5)),
        };
        assert!(Scene::new(g, Some(arm), None).is_err());
    }

    #[test]
    fn mean_level_follows_pair_rate() {
        // <I(r)> = x0 + 2 A m eta P_m(r) for a uniform pair source.
        let g = grid(8);
        let cam = CameraModel {
            gain: 50.0,
            ..CameraModel::default()
        };
        let rate = 32.0;
        let arm = PairArm {
            source: PairSource::uniform(g, rate, 10.0).unwrap(),
            mask: ObjectMask::transparent(g),
        };
        let scene = Scene::new(g, Some(arm), None).unwrap();
        let n = 20_000u64;
        let mut stack = FrameStack::new(g, 6.0);
        let summary = simulate_stack(&scene, &cam, n, 3, &mut stack).unwrap();
        assert!(summary.clamped_pixels < 5);
        let expected = 167.0 + 2.0 * 50.0 * rate * 0.7 / 64.0;
        let (mean, var) = pixel_moments(&stack);
        // Resampled partners pile up one pixel inside the border, so only
        // the interior is flat.
        for y in 2..6 {
            for x in 2..6 {
                let i = g.index(x, y);
                let se = (var[i] / n as f64).sqrt();
                assert!((mean[i] - expected).abs() < 4.0 * se, "({x},{y}) mean {} expected {expected}", mean[i]);
            }
        }
        let all = mean.iter().sum::<f64>() / 64.0;
        assert!((all - expected).abs() < 0.3, "grid mean {all}");
        let truth = scene.ground_truth(&cam);
        assert!((truth.quantum_direct.mean() + 167.0 - expected).abs() < 1e-9);
    }

    #[test]
    fn pair_rate_hits_operating_gray_level() {
        let g = grid(16);
        let cam = CameraModel::default();
        let rate = pair_rate_for_mean_gray(g, &cam, 939.0).unwrap();
        assert!((167.0 + 2.0 * cam.gain * rate * cam.quantum_efficiency / 256.0 - 939.0).abs() < 1e-9);
        assert!(pair_rate_for_mean_gray(g, &cam, 100.0).is_err());

        let arm = PairArm {
            source: PairSource::uniform(g, rate, 10.0).unwrap(),
            mask: ObjectMask::transparent(g),
        };
        let scene = Scene::new(g, Some(arm), None).unwrap();
        let mut stack = FrameStack::new(g, 6.0);
        let s = simulate_stack(&scene, &cam, 2000, 9, &mut stack).unwrap();
        assert_eq!(s.clamped_pixels, 0);
        assert!((s.mean_gray - 939.0).abs() < 2.0, "{}", s.mean_gray);
    }

    #[test]
    fn output_is_independent_of_thread_count() {
        let g = grid(6);
        let cam = CameraModel::default();
        let scene = Scene::new(
            g,
            Some(PairArm {
                source: PairSource::uniform(g, 5.0, 10.0).unwrap(),
                mask: ObjectMask::transparent(g),
            }),
            Some(ClassicalArm {
                source: ClassicalSource::uniform(g, 0.3).unwrap(),
                mask: ObjectMask::transparent(g),
            }),
        )
        .unwrap();
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut stack = FrameStack::new(g, 6.0);
                simulate_stack(&scene, &cam, 300, 42, &mut stack).unwrap();
                stack
            })
        };
        assert_eq!(run(1), run(3));
    }
}
