//! Photon arrivals at the camera plane.
//!
//! Pairs are emitted with a Poisson-distributed count per frame. The first
//! photon of each pair lands on a pixel drawn from the source marginal, at a
//! uniformly random position inside that pixel; its partner is displaced by
//! an isotropic Gaussian offset of width `correlation_width`. Object masks
//! act as per-photon absorbers with survival probability `|t|^2`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::image::{Grid, Pixel};

/// Partner offsets are redrawn at most this many times before the partner
/// is clamped onto the grid.
const MAX_PARTNER_DRAWS: usize = 1000;

/// Amplitude transmittance of an object, one value per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    grid: Grid,
    t: Vec<f64>,
}

impl ObjectMask {
    pub fn new(grid: Grid, t: Vec<f64>) -> Result<Self> {
        if t.len() != grid.len() {
            return Err(Error::invalid(
                "mask",
                format!("{} values for a {}x{} grid", t.len(), grid.width, grid.height),
            ));
        }
        if let Some(bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(
                "mask",
                format!("transmittance {bad} outside [0, 1]"),
            ));
        }
        Ok(Self { grid, t })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut t = Vec::with_capacity(grid.len());
        for y in 0..grid.height {
            for x in 0..grid.width {
                t.push(f(x, y));
            }
        }
        Self::new(grid, t)
    }

    pub fn transparent(grid: Grid) -> Self {
        Self {
            grid,
            t: vec![1.0; grid.len()],
        }
    }

    pub fn opaque(grid: Grid) -> Self {
        Self {
            grid,
            t: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Amplitude transmittance `t(r)`.
    #[inline]
    pub fn amplitude(&self, p: Pixel) -> f64 {
        self.t[self.grid.index(p.x, p.y)]
    }

    /// Photon survival probability `|t(r)|^2`.
    #[inline]
    pub fn survival(&self, p: Pixel) -> f64 {
        let t = self.amplitude(p);
        t * t
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.t
    }
}

#[derive(Debug, Clone)]
enum MarginalSampler {
    Uniform,
    Weighted(WeightedIndex<f64>),
}

/// Source of position-correlated photon pairs.
#[derive(Debug, Clone)]
pub struct PairSource {
    grid: Grid,
    mean_pair_rate: f64,
    correlation_width_um: f64,
    marginal: Vec<f64>,
    sampler: MarginalSampler,
    count: Poisson<f64>,
}

impl PairSource {
    /// Pair source with a uniform marginal over the grid.
    pub fn uniform(grid: Grid, mean_pair_rate: f64, correlation_width_um: f64) -> Result<Self> {
        let marginal = vec![1.0 / grid.len() as f64; grid.len()];
        Self::build(grid, mean_pair_rate, correlation_width_um, marginal, MarginalSampler::Uniform)
    }

    /// Pair source with an arbitrary nonnegative illumination profile,
    /// normalized here to sum to one.
    pub fn with_profile(
        grid: Grid,
        mean_pair_rate: f64,
        correlation_width_um: f64,
        profile: &[f64],
    ) -> Result<Self> {
        if profile.len() != grid.len() {
            return Err(Error::invalid("marginal_profile", "size does not match grid"));
        }
        if profile.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("marginal_profile", "entries must be finite and >= 0"));
        }
        let total: f64 = profile.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("marginal_profile", "profile is identically zero"));
        }
        let marginal: Vec<f64> = profile.iter().map(|v| v / total).collect();
        let index = WeightedIndex::new(&marginal)
            .map_err(|e| Error::invalid("marginal_profile", e.to_string()))?;
        Self::build(
            grid,
            mean_pair_rate,
            correlation_width_um,
            marginal,
            MarginalSampler::Weighted(index),
        )
    }

    fn build(
        grid: Grid,
        mean_pair_rate: f64,
        correlation_width_um: f64,
        marginal: Vec<f64>,
        sampler: MarginalSampler,
    ) -> Result<Self> {
        if !(mean_pair_rate > 0.0 && mean_pair_rate.is_finite()) {
            return Err(Error::invalid("mean_pair_rate", format!("{mean_pair_rate} is not > 0")));
        }
        if !(correlation_width_um >= 0.0 && correlation_width_um.is_finite()) {
            return Err(Error::invalid(
                "correlation_width",
                format!("{correlation_width_um} is not >= 0"),
            ));
        }
        let count = Poisson::new(mean_pair_rate)
            .map_err(|e| Error::invalid("mean_pair_rate", e.to_string()))?;
        Ok(Self {
            grid,
            mean_pair_rate,
            correlation_width_um,
            marginal,
            sampler,
            count,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn mean_pair_rate(&self) -> f64 {
        self.mean_pair_rate
    }

    pub fn correlation_width_um(&self) -> f64 {
        self.correlation_width_um
    }

    /// Marginal detection probability `P_m(r)` of the source (sums to one).
    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    /// Copy of this source with a different correlation width, used to
    /// emulate a defocused object.
    pub fn with_correlation_width(&self, correlation_width_um: f64) -> Result<Self> {
        Self::build(
            self.grid,
            self.mean_pair_rate,
            correlation_width_um,
            self.marginal.clone(),
            self.sampler.clone(),
        )
    }

    /// Draws the photon pairs of one frame.
    pub fn sample_pairs<R: Rng + ?Sized>(&self, pixel_pitch_um: f64, rng: &mut R) -> Vec<(Pixel, Pixel)> {
        let mut out = Vec::new();
        self.sample_pairs_into(pixel_pitch_um, rng, &mut out);
        out
    }

    pub fn sample_pairs_into<R: Rng + ?Sized>(
        &self,
        pixel_pitch_um: f64,
        rng: &mut R,
        out: &mut Vec<(Pixel, Pixel)>,
    ) {
        out.clear();
        let n = self.count.sample(rng) as usize;
        let sigma_px = if pixel_pitch_um > 0.0 {
            self.correlation_width_um / pixel_pitch_um
        } else {
            0.0
        };
        for _ in 0..n {
            let first = self.sample_first(rng);
            let second = self.sample_partner(first, sigma_px, rng);
            out.push((first, second));
        }
    }

    fn sample_first<R: Rng + ?Sized>(&self, rng: &mut R) -> Pixel {
        let i = match &self.sampler {
            MarginalSampler::Uniform => rng.random_range(0..self.grid.len()),
            MarginalSampler::Weighted(index) => index.sample(rng),
        };
        Pixel::new(i % self.grid.width, i / self.grid.width)
    }

    fn sample_partner<R: Rng + ?Sized>(&self, first: Pixel, sigma_px: f64, rng: &mut R) -> Pixel {
        if sigma_px == 0.0 {
            return first;
        }
        let fx = first.x as f64 + rng.random::<f64>();
        let fy = first.y as f64 + rng.random::<f64>();
        let (w, h) = (self.grid.width as f64, self.grid.height as f64);
        let mut last = (fx, fy);
        for _ in 0..MAX_PARTNER_DRAWS {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            let (sx, sy) = (fx + sigma_px * dx, fy + sigma_px * dy);
            if sx >= 0.0 && sy >= 0.0 && sx < w && sy < h {
                return Pixel::new(sx as usize, sy as usize);
            }
            last = (sx, sy);
        }
        Pixel::new(
            last.0.clamp(0.0, w - 1.0) as usize,
            last.1.clamp(0.0, h - 1.0) as usize,
        )
    }
}

/// Uncorrelated (coherent) light: independent Poisson counts per pixel.
#[derive(Debug, Clone)]
pub struct ClassicalSource {
    grid: Grid,
    mean_intensity: Vec<f64>,
}

impl ClassicalSource {
    pub fn new(grid: Grid, mean_intensity: Vec<f64>) -> Result<Self> {
        if mean_intensity.len() != grid.len() {
            return Err(Error::invalid("mean_intensity", "size does not match grid"));
        }
        if mean_intensity.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("mean_intensity", "entries must be finite and >= 0"));
        }
        Ok(Self {
            grid,
            mean_intensity,
        })
    }

    pub fn uniform(grid: Grid, photons_per_pixel: f64) -> Result<Self> {
        Self::new(grid, vec![photons_per_pixel; grid.len()])
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Expected photons per pixel per frame, before the object.
    pub fn mean_intensity(&self) -> &[f64] {
        &self.mean_intensity
    }
}

/// Classical source seen through its object, with per-pixel Poisson laws
/// prepared once.
#[derive(Debug, Clone)]
pub struct ClassicalEmitter {
    grid: Grid,
    laws: Vec<Option<Poisson<f64>>>,
}

impl ClassicalEmitter {
    pub fn new(source: &ClassicalSource, mask: &ObjectMask) -> Result<Self> {
        source.grid.ensure_same(mask.grid())?;
        let laws = source
            .mean_intensity
            .iter()
            .zip(mask.amplitudes())
            .map(|(&mean, &t)| {
                let rate = mean * t * t;
                if rate > 0.0 {
                    Poisson::new(rate)
                        .map(Some)
                        .map_err(|e| Error::invalid("mean_intensity", e.to_string()))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: source.grid,
            laws,
        })
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<PhotonRecord>) {
        for (i, law) in self.laws.iter().enumerate() {
            let Some(law) = law else { continue };
            let n = law.sample(rng) as usize;
            let pixel = Pixel::new(i % self.grid.width, i / self.grid.width);
            out.extend(std::iter::repeat_n(
                PhotonRecord {
                    pixel,
                    origin: Origin::Classical,
                },
                n,
            ));
        }
    }
}

/// Where a detected photon came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    /// Photon of a pair whose partner also survived the object.
    PairBoth,
    /// Photon of a pair whose partner was absorbed.
    PairSingle,
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhotonRecord {
    pub pixel: Pixel,
    pub origin: Origin,
}

/// Outcome of sending one pair through an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transmitted {
    None,
    Single(PhotonRecord),
    Both(PhotonRecord, PhotonRecord),
}

impl Transmitted {
    pub fn records(self) -> impl Iterator<Item = PhotonRecord> {
        let (a, b) = match self {
            Transmitted::None => (None, None),
            Transmitted::Single(a) => (Some(a), None),
            Transmitted::Both(a, b) => (Some(a), Some(b)),
        };
        a.into_iter().chain(b)
    }

    pub fn len(&self) -> usize {
        match self {
            Transmitted::None => 0,
            Transmitted::Single(_) => 1,
            Transmitted::Both(..) => 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Transmitted::None)
    }
}

/// Thins a pair through `mask`: each photon survives independently with
/// probability `|t|^2` at its own pixel.
pub fn transmit_pair<R: Rng + ?Sized>(pair: (Pixel, Pixel), mask: &ObjectMask, rng: &mut R) -> Transmitted {
    let survives = |p: Pixel, rng: &mut R| rng.random::<f64>() < mask.survival(p);
    let first = survives(pair.0, rng);
    let second = survives(pair.1, rng);
    let record = |pixel, origin| PhotonRecord { pixel, origin };
    match (first, second) {
        (true, true) => Transmitted::Both(
            record(pair.0, Origin::PairBoth),
            record(pair.1, Origin::PairBoth),
        ),
        (true, false) => Transmitted::Single(record(pair.0, Origin::PairSingle)),
        (false, true) => Transmitted::Single(record(pair.1, Origin::PairSingle)),
        (false, false) => Transmitted::None,
    }
}

/// Classical photons of one frame through `mask`.
pub fn sample_classical<R: Rng + ?Sized>(
    source: &ClassicalSource,
    mask: &ObjectMask,
    rng: &mut R,
) -> Result<Vec<PhotonRecord>> {
    let emitter = ClassicalEmitter::new(source, mask)?;
    let mut out = Vec::new();
    emitter.sample_into(rng, &mut out);
    Ok(out)
}

/// Per-pixel photon counts of a set of records.
pub fn render_frame_counts(records: &[PhotonRecord], grid: Grid) -> Vec<u32> {
    let mut counts = vec![0u32; grid.len()];
    for r in records {
        counts[grid.index(r.pixel.x, r.pixel.y)] += 1;
    }
    counts
}
