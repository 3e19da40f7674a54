use super::accumulate::AccumulatorSet;
use super::window::{Offset, Window};
use crate::error::{Error, Result};
use crate::image::{Grid, Image, Pixel};

/// Neighbor used in place of the same-pixel correlation.
pub const DIAGONAL_NEIGHBOR: Offset = Offset::new(-1, 0);

/// Windowed intensity-correlation function `Gamma(r, r+d)`.
///
/// The zero-offset plane holds the neighbor estimate of `Gamma(r, r)`
/// rather than the same-pixel product, which carries the variance of the
/// pixel. Entries whose partner falls off the grid are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    grid: Grid,
    window: Window,
    n_frames: u64,
    /// Layout `[offset][y][x]`.
    gamma: Vec<f64>,
    diagonal: Image,
    marginal: Image,
}

impl CorrelationResult {
    /// Reassembles a result from its stored planes.
    pub fn from_parts(
        grid: Grid,
        window_radius: usize,
        n_frames: u64,
        gamma: Vec<f64>,
        diagonal: Vec<f64>,
        marginal: Vec<f64>,
    ) -> Result<Self> {
        let window = Window::new(window_radius);
        if gamma.len() != window.len() * grid.len() {
            return Err(Error::Format(format!(
                "gamma has {} values, expected {}",
                gamma.len(),
                window.len() * grid.len()
            )));
        }
        if gamma.iter().chain(&diagonal).chain(&marginal).any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite correlation value".into()));
        }
        Ok(Self {
            grid,
            window,
            n_frames,
            gamma,
            diagonal: Image::from_vec(grid, diagonal)?,
            marginal: Image::from_vec(grid, marginal)?,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn window_radius(&self) -> usize {
        self.window.radius()
    }

    pub fn n_frames(&self) -> u64 {
        self.n_frames
    }

    /// `Gamma(r, r)` from the neighbor rule.
    pub fn diagonal(&self) -> &Image {
        &self.diagonal
    }

    /// Temporal mean `<I(r)>`.
    pub fn marginal(&self) -> &Image {
        &self.marginal
    }

    /// All planes, layout `[offset][y][x]`.
    pub fn gamma_values(&self) -> &[f64] {
        &self.gamma
    }

    pub fn plane(&self, off: Offset) -> Option<&[f64]> {
        let o = self.window.index(off)?;
        let n = self.grid.len();
        Some(&self.gamma[o * n..(o + 1) * n])
    }

    /// `Gamma(p, p+d)`; `None` outside the window or off the grid.
    pub fn gamma(&self, p: Pixel, off: Offset) -> Option<f64> {
        let (x, y) = (p.x as i64 + off.dx as i64, p.y as i64 + off.dy as i64);
        if !self.grid.contains(x, y) {
            return None;
        }
        self.plane(off).map(|plane| plane[self.grid.index(p.x, p.y)])
    }

    /// `Gamma(r1, r2)` for any pair within the window.
    pub fn between(&self, r1: Pixel, r2: Pixel) -> Option<f64> {
        let off = Offset::new(r2.x as i32 - r1.x as i32, r2.y as i32 - r1.y as i32);
        self.gamma(r1, off)
    }

    /// Conditional image relative to `anchor`, normalized over the window.
    pub fn conditional_projection(&self, anchor: Pixel) -> ConditionalImage {
        let mut image = Image::zeros(self.grid);
        let mut total = 0.0;
        for off in self.window.offsets() {
            if let Some(v) = self.gamma(anchor, off) {
                let (x, y) = ((anchor.x as i64 + off.dx as i64) as usize, (anchor.y as i64 + off.dy as i64) as usize);
                image.set(x, y, v);
                total += v;
            }
        }
        let normalized = total > 0.0;
        if normalized {
            image.as_mut_slice().iter_mut().for_each(|v| *v /= total);
        }
        ConditionalImage {
            anchor,
            image,
            normalized,
        }
    }

    /// `P(d) = sum_r Gamma(r, r+d)`, summing only pairs inside the grid.
    pub fn minus_projection(&self) -> MinusCoordinateMap {
        let values = self
            .window
            .offsets()
            .map(|off| self.plane(off).expect("offset in window").iter().sum())
            .collect();
        MinusCoordinateMap {
            radius: self.window.radius(),
            values,
        }
    }

    /// `K(r) = sum_{|d| <= radius} Gamma(r, r+d)`: the rate at `r` of
    /// photons whose partner was also detected nearby.
    pub fn coincidence_marginal(&self, radius: usize) -> Image {
        let radius = radius.min(self.window.radius());
        let mut out = vec![0.0; self.grid.len()];
        for off in self.window.offsets().filter(|o| o.radius() as usize <= radius) {
            for (o, v) in out.iter_mut().zip(self.plane(off).expect("offset in window")) {
                *o += v;
            }
        }
        Image::from_vec(self.grid, out).expect("grid sized")
    }
}

/// Slice of `Gamma` relative to one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalImage {
    pub anchor: Pixel,
    pub image: Image,
    /// False when the window sum was not positive and the slice is raw.
    pub normalized: bool,
}

/// Minus-coordinate projection over the offset window.
#[derive(Debug, Clone, PartialEq)]
pub struct MinusCoordinateMap {
    radius: usize,
    values: Vec<f64>,
}

impl MinusCoordinateMap {
    pub fn new(radius: usize, values: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if values.len() != side * side {
            return Err(Error::invalid("minus map", format!("{} values for radius {radius}", values.len())));
        }
        Ok(Self { radius, values })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn get(&self, off: Offset) -> Option<f64> {
        Window::new(self.radius).index(off).map(|i| self.values[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (Offset, f64)> + '_ {
        let w = Window::new(self.radius);
        self.values.iter().enumerate().map(move |(i, &v)| (w.offset(i), v))
    }

    pub fn to_image(&self) -> Image {
        let g = Grid {
            width: self.side(),
            height: self.side(),
        };
        Image::from_vec(g, self.values.clone()).expect("square map")
    }
}

/// Correlation estimate from the accumulated sums:
/// `Gamma(r, r+d) = S_same/N - (S_succ(r, d) + S_succ(r+d, -d)) / (2 (N-1))`.
pub fn finalize_gamma(acc: &AccumulatorSet) -> Result<CorrelationResult> {
    let n = acc.frames_seen();
    if n < 2 {
        return Err(Error::TooFewFrames(n));
    }
    let grid = acc.grid();
    let window = acc.window();
    let inv_n = 1.0 / n as f64;
    let inv_succ = 1.0 / (2.0 * (n - 1) as f64);
    let mut gamma = vec![0.0; window.len() * grid.len()];

    for (o, off) in window.offsets().enumerate() {
        if off == Offset::ZERO {
            continue;
        }
        let plane = &mut gamma[o * grid.len()..(o + 1) * grid.len()];
        for y in 0..grid.height {
            for x in 0..grid.width {
                let p = Pixel::new(x, y);
                let Some(same) = acc.same(p, off) else { continue };
                let q = Pixel::new((x as i64 + off.dx as i64) as usize, (y as i64 + off.dy as i64) as usize);
                let forward = acc.succ(p, off).expect("partner on grid");
                let backward = acc.succ(q, -off).expect("partner on grid");
                let succ = (forward as u128 + backward as u128) as f64;
                plane[grid.index(x, y)] = same as f64 * inv_n - succ * inv_succ;
            }
        }
    }

    let left = window.index(DIAGONAL_NEIGHBOR).expect("window radius >= 1");
    let right = window.index(-DIAGONAL_NEIGHBOR).expect("window radius >= 1");
    let diagonal = Image::from_fn(grid, |x, y| {
        let o = if x >= 1 { left } else { right };
        gamma[o * grid.len() + grid.index(x, y)]
    });
    let center = window.index(Offset::ZERO).expect("zero offset");
    gamma[center * grid.len()..(center + 1) * grid.len()].copy_from_slice(diagonal.as_slice());

    let marginal = Image::from_fn(grid, |x, y| acc.sum(Pixel::new(x, y)) as f64 / n as f64);
    Ok(CorrelationResult {
        grid,
        window,
        n_frames: n,
        gamma,
        diagonal,
        marginal,
    })
}
