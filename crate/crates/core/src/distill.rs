//! Separation of a mixed stack into the pair image, the classical image and
//! the map of residual single photons.

use crate::correlator::{CorrelationResult, Offset};
use crate::error::{Error, Result};
use crate::image::{Grid, Image};
use crate::stack::{mean_image, FrameSource};

/// Image scaled and subtracted from the direct image to remove the pair
/// contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubtractionTemplate {
    /// `sqrt(max(Q, 0))`.
    SqrtDiagonal,
    /// Sum of `Gamma(r, r+d)` over `|d| <= radius`. Falls off at object
    /// edges exactly as the partner-detected photons do.
    Coincidence { radius: usize },
}

impl Default for SubtractionTemplate {
    fn default() -> Self {
        SubtractionTemplate::Coincidence { radius: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOptions {
    pub template: SubtractionTemplate,
    /// Pixels with `Q` at or above this quantile of `Q` calibrate the scale.
    pub calibration_quantile: f64,
    /// Minimum z-score of the summed diagonal for a pair signal.
    pub min_significance: f64,
    /// Pixels within this distance of an object edge are flagged as
    /// residual-single candidates.
    pub edge_distance: usize,
}

impl Default for DistillOptions {
    fn default() -> Self {
        Self {
            template: SubtractionTemplate::default(),
            calibration_quantile: 0.75,
            min_significance: 5.0,
            edge_distance: 2,
        }
    }
}

impl DistillOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.calibration_quantile) {
            return Err(Error::invalid(
                "calibration_quantile",
                format!("{} outside [0, 1)", self.calibration_quantile),
            ));
        }
        if !(self.min_significance >= 0.0) {
            return Err(Error::invalid("min_significance", "must be >= 0"));
        }
        Ok(())
    }
}

/// Noise-floor-subtracted temporal mean `D = mean(I) - x0`.
pub fn direct_intensity(mean: &Image, noise_mean: f64) -> Image {
    mean.map(|v| v - noise_mean)
}

/// [`direct_intensity`] computed in one pass over a stream.
pub fn direct_intensity_of<S: FrameSource + ?Sized>(source: &mut S, noise_mean: f64) -> Result<Image> {
    let grid = source.grid();
    let (mean, n) = mean_image(source)?;
    if n == 0 {
        return Err(Error::TooFewFrames(0));
    }
    Ok(direct_intensity(&Image::from_vec(grid, mean)?, noise_mean))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumImage {
    /// Raw diagonal `Gamma(r, r)`; may be negative.
    pub q: Image,
    /// `(max(Q, 0) / max Q)^(1/4)`, zero when there is no signal.
    pub object: Image,
    /// `sum Q / (sigma sqrt(n))`, with `sigma` the spread of `Gamma` on the
    /// outer ring of the window.
    pub significance: f64,
    pub no_signal: bool,
}

/// Standard deviation of the correlation estimate, taken from the offsets
/// on the border of the window where pairs are not expected.
pub fn gamma_noise(res: &CorrelationResult) -> f64 {
    let grid = res.grid();
    let ring = res.window_radius() as u32;
    let (mut n, mut s, mut s2) = (0usize, 0.0, 0.0);
    for off in res.window().offsets().filter(|o| o.radius() == ring) {
        let plane = res.plane(off).expect("offset in window");
        for y in 0..grid.height {
            for x in 0..grid.width {
                let (px, py) = (x as i64 + off.dx as i64, y as i64 + off.dy as i64);
                if grid.contains(px, py) {
                    let v = plane[grid.index(x, y)];
                    n += 1;
                    s += v;
                    s2 += v * v;
                }
            }
        }
    }
    if n < 2 {
        return 0.0;
    }
    let mean = s / n as f64;
    ((s2 - n as f64 * mean * mean) / (n - 1) as f64).max(0.0).sqrt()
}

pub fn quantum_image(res: &CorrelationResult, min_significance: f64) -> QuantumImage {
    let q = res.diagonal().clone();
    let peak = q.max();
    let sigma = gamma_noise(res);
    let significance = if sigma > 0.0 {
        q.sum() / (sigma * (q.as_slice().len() as f64).sqrt())
    } else if q.sum() > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let no_signal = !(peak > 0.0) || significance < min_significance;
    let object = if peak > 0.0 {
        q.map(|v| (v.max(0.0) / peak).powf(0.25))
    } else {
        Image::zeros(q.grid())
    };
    QuantumImage {
        q,
        object,
        significance,
        no_signal,
    }
}

/// Builds the subtraction template for a correlation result.
pub fn template_image(res: &CorrelationResult, template: SubtractionTemplate) -> Image {
    match template {
        SubtractionTemplate::SqrtDiagonal => res.diagonal().map(|v| v.max(0.0).sqrt()),
        SubtractionTemplate::Coincidence { radius } => res.coincidence_marginal(radius),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalImage {
    pub image: Image,
    /// Fitted scale `c`; `C = D - c * template`.
    pub scale: f64,
    pub calibration_pixels: usize,
    /// Set when there was nothing to calibrate on and `C = D`.
    pub uncalibrated: bool,
}

/// Pixels whose `q` lies at or above the given quantile.
pub fn calibration_set(q: &Image, quantile: f64) -> Vec<bool> {
    let mut sorted = q.as_slice().to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted[((sorted.len() as f64 * quantile).floor() as usize).min(sorted.len() - 1)];
    q.as_slice().iter().map(|&v| v >= cut).collect()
}

/// Least-squares subtraction `C = D - c T` with `c` fitted on `calibration`.
/// An empty calibration set, or one on which `T` vanishes, leaves `C = D`.
pub fn classical_image(direct: &Image, template: &Image, calibration: Option<&[bool]>) -> Result<ClassicalImage> {
    direct.grid().ensure_same(template.grid())?;
    let (mut dt, mut tt, mut n) = (0.0, 0.0, 0usize);
    if let Some(mask) = calibration {
        for ((&d, &t), _) in direct
            .as_slice()
            .iter()
            .zip(template.as_slice())
            .zip(mask)
            .filter(|(_, &m)| m)
        {
            dt += d * t;
            tt += t * t;
            n += 1;
        }
    }
    if n == 0 || !(tt > 0.0) {
        return Ok(ClassicalImage {
            image: direct.clone(),
            scale: 0.0,
            calibration_pixels: n,
            uncalibrated: true,
        });
    }
    let scale = dt / tt;
    let data = direct
        .as_slice()
        .iter()
        .zip(template.as_slice())
        .map(|(d, t)| d - scale * t)
        .collect();
    Ok(ClassicalImage {
        image: Image::from_vec(direct.grid(), data)?,
        scale,
        calibration_pixels: n,
        uncalibrated: false,
    })
}

/// `R = C - G`: residual single photons come out positive.
pub fn residual_map(classical: &Image, ground_truth: &Image) -> Result<Image> {
    classical.grid().ensure_same(ground_truth.grid())?;
    let data = classical
        .as_slice()
        .iter()
        .zip(ground_truth.as_slice())
        .map(|(c, g)| c - g)
        .collect();
    Image::from_vec(classical.grid(), data)
}

/// Mean over the `(2 radius + 1)^2` neighborhood clipped to the grid.
pub fn box_mean(image: &Image, radius: usize) -> Image {
    let g = image.grid();
    let r = radius as i64;
    Image::from_fn(g, |x, y| {
        let (mut s, mut n) = (0.0, 0usize);
        for ny in (y as i64 - r).max(0)..=(y as i64 + r).min(g.height as i64 - 1) {
            for nx in (x as i64 - r).max(0)..=(x as i64 + r).min(g.width as i64 - 1) {
                s += image.get(nx as usize, ny as usize);
                n += 1;
            }
        }
        s / n as f64
    })
}

/// Median of `image` over the selected pixels.
pub fn median_over(image: &Image, keep: &[bool]) -> f64 {
    let mut v: Vec<f64> = image.as_slice().iter().zip(keep).filter(|(_, &k)| k).map(|(&v, _)| v).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Pixels within `distance` (Chebyshev) of a boundary of the binarized
/// `object >= threshold`. Pixels off the grid do not count as boundary.
pub fn edge_pixels(object: &Image, threshold: f64, distance: usize) -> Vec<bool> {
    let grid = object.grid();
    let inside: Vec<bool> = object.as_slice().iter().map(|&v| v >= threshold).collect();
    let mut boundary = vec![false; grid.len()];
    for y in 0..grid.height {
        for x in 0..grid.width {
            let here = inside[grid.index(x, y)];
            boundary[grid.index(x, y)] = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                grid.contains(nx, ny) && inside[grid.index(nx as usize, ny as usize)] != here
            });
        }
    }
    dilate(grid, &boundary, distance)
}

/// Chebyshev dilation of a pixel set.
pub fn dilate(grid: Grid, set: &[bool], distance: usize) -> Vec<bool> {
    let d = distance as i64;
    let mut out = vec![false; grid.len()];
    for y in 0..grid.height as i64 {
        for x in 0..grid.width as i64 {
            if !set[grid.index(x as usize, y as usize)] {
                continue;
            }
            for ny in (y - d).max(0)..=(y + d).min(grid.height as i64 - 1) {
                for nx in (x - d).max(0)..=(x + d).min(grid.width as i64 - 1) {
                    out[grid.index(nx as usize, ny as usize)] = true;
                }
            }
        }
    }
    out
}

/// Chebyshev distance of each pixel to the boundary of a binary set,
/// capped at `cap`. Boundary pixels have distance 0.
pub fn boundary_distance(grid: Grid, inside: &[bool], cap: usize) -> Vec<usize> {
    let mask = Image::from_vec(grid, inside.iter().map(|&b| b as u8 as f64).collect()).expect("grid sized");
    let boundary = edge_pixels(&mask, 0.5, 0);
    let mut dist = vec![cap; grid.len()];
    let mut reached = boundary;
    for d in 0..cap {
        for (out, &r) in dist.iter_mut().zip(&reached) {
            if r && *out == cap {
                *out = d;
            }
        }
        reached = dilate(grid, &reached, 1);
    }
    dist
}

/// Mean of `residual` over the pixels of `inside` at each boundary
/// distance `0..=max_distance`; `NaN` where no pixel sits at a distance.
pub fn edge_profile(residual: &Image, inside: &[bool], max_distance: usize) -> Vec<f64> {
    let dist = boundary_distance(residual.grid(), inside, max_distance + 1);
    let mut sums = vec![(0.0, 0usize); max_distance + 1];
    for ((&v, &d), &k) in residual.as_slice().iter().zip(&dist).zip(inside) {
        if k && d <= max_distance {
            sums[d].0 += v;
            sums[d].1 += 1;
        }
    }
    sums.into_iter().map(|(s, n)| s / n as f64).collect()
}

/// First moment of the positive part of an edge profile: how far inside
/// the object the residual reaches.
pub fn edge_thickness(profile: &[f64]) -> f64 {
    let (mut m0, mut m1) = (0.0, 0.0);
    for (d, &v) in profile.iter().enumerate().filter(|(_, v)| v.is_finite()) {
        m0 += v.max(0.0);
        m1 += d as f64 * v.max(0.0);
    }
    m1 / m0
}

/// Share of `sum |R|` lying within `distance` of the boundary of `inside`,
/// on either side.
pub fn edge_mass_fraction(residual: &Image, inside: &[bool], distance: usize) -> f64 {
    let mask = Image::from_vec(residual.grid(), inside.iter().map(|&b| b as u8 as f64).collect()).expect("grid sized");
    let near = edge_pixels(&mask, 0.5, distance);
    let (mut total, mut close) = (0.0, 0.0);
    for (&v, &n) in residual.as_slice().iter().zip(&near) {
        total += v.abs();
        if n {
            close += v.abs();
        }
    }
    close / total
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillationResult {
    pub direct: Image,
    pub quantum: QuantumImage,
    pub template: Image,
    pub classical: ClassicalImage,
    /// Residual-single candidates: pixels near the boundary of the region
    /// where the locally averaged `Q` exceeds half its typical calibration
    /// value.
    pub edges: Vec<bool>,
    /// Present when a classical ground truth was supplied.
    pub residual: Option<Image>,
}

impl DistillationResult {
    pub fn grid(&self) -> Grid {
        self.direct.grid()
    }
}

/// Runs the full separation on a correlation result whose marginal is the
/// frame mean.
pub fn distill(
    res: &CorrelationResult,
    noise_mean: f64,
    ground_truth: Option<&Image>,
    options: &DistillOptions,
) -> Result<DistillationResult> {
    options.validate()?;
    let direct = direct_intensity(res.marginal(), noise_mean);
    let quantum = quantum_image(res, options.min_significance);
    let template = template_image(res, options.template);
    let top = (!quantum.no_signal).then(|| calibration_set(&quantum.q, options.calibration_quantile));
    let edges = match &top {
        Some(m) => {
            let smooth = box_mean(&quantum.q, 1);
            edge_pixels(&smooth, 0.5 * median_over(&smooth, m), options.edge_distance)
        }
        None => vec![false; direct.grid().len()],
    };
    // Edge pixels carry residual singles, which the template cannot model.
    let calibration = top.map(|m| {
        let interior: Vec<bool> = m.iter().zip(&edges).map(|(&m, &e)| m && !e).collect();
        if interior.contains(&true) {
            interior
        } else {
            m
        }
    });
    let classical = classical_image(&direct, &template, calibration.as_deref())?;
    let residual = ground_truth.map(|g| residual_map(&classical.image, g)).transpose()?;
    Ok(DistillationResult {
        direct,
        quantum,
        template,
        classical,
        edges,
        residual,
    })
}

/// Mean and standard error of `q` over the selected pixels.
pub fn region_mean(q: &Image, keep: &[bool]) -> (f64, f64) {
    let v: Vec<f64> = q.as_slice().iter().zip(keep).filter(|(_, &k)| k).map(|(&v, _)| v).collect();
    let n = v.len() as f64;
    if v.len() < 2 {
        return (v.first().copied().unwrap_or(f64::NAN), f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Center of the minus-coordinate projection compared with its outer ring:
/// `(center, ring mean, ring standard deviation)`.
pub fn projection_center(res: &CorrelationResult) -> (f64, f64, f64) {
    let map = res.minus_projection();
    let ring = map.radius() as u32;
    let outer: Vec<f64> = map.iter().filter(|(o, _)| o.radius() == ring).map(|(_, v)| v).collect();
    let n = outer.len() as f64;
    let mean = outer.iter().sum::<f64>() / n;
    let sd = (outer.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    (map.get(Offset::ZERO).expect("center"), mean, sd)
}
