//! Single-pass accumulation of same-frame and successive-frame pixel
//! products over a bounded offset window.
//!
//! Frames are buffered in small batches. Each batch is swept once per block
//! of pixel rows; a block owns its slice of every accumulator, so blocks run
//! in parallel without sharing state. All sums are exact unsigned integers,
//! which makes the result independent of the thread count and of batching.

use std::ops::Range;

use rayon::prelude::*;

use super::simd::{madd_pairs, Isa, LANES};
use super::window::{Offset, Window};
use crate::error::{Error, Result};
use crate::image::{Grid, Pixel};
use crate::stack::{FrameSink, FrameSource};

/// Frames per batch.
const BATCH_FRAMES: usize = 64;

/// Stored row length: `radius` zeros, the row rounded up to whole chunks,
/// then `radius` zeros again.
fn padded_width(width: usize, radius: usize) -> usize {
    width.next_multiple_of(LANES) + 2 * radius
}

/// Raw product sums of a frame stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccumulatorSet {
    grid: Grid,
    window: Window,
    frames_seen: u64,
    /// `sum_l I_l(r) I_l(r+d)`, upper half of the window, layout `[y][half][x]`.
    same: Vec<u64>,
    /// `sum_l I_l(r) I_{l+1}(r+d)`, full window, layout `[y][offset][x]`.
    succ: Vec<u64>,
    /// `sum_l I_l(r)`.
    sum: Vec<u64>,
}

impl AccumulatorSet {
    fn zeros(grid: Grid, window: Window) -> Self {
        Self {
            grid,
            window,
            frames_seen: 0,
            same: vec![0; grid.len() * window.half_len()],
            succ: vec![0; grid.len() * window.len()],
            sum: vec![0; grid.len()],
        }
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

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    fn partner(&self, p: Pixel, off: Offset) -> Option<Pixel> {
        let (x, y) = (p.x as i64 + off.dx as i64, p.y as i64 + off.dy as i64);
        self.grid
            .contains(x, y)
            .then(|| Pixel::new(x as usize, y as usize))
    }

    /// `sum_l I_l(p) I_l(p+d)`; `None` when `p+d` is off the grid or `d` is
    /// outside the window.
    pub fn same(&self, p: Pixel, off: Offset) -> Option<u64> {
        let q = self.partner(p, off)?;
        let (p, off) = match self.window.half_index(off) {
            Some(_) => (p, off),
            None => (q, -off),
        };
        let h = self.window.half_index(off)?;
        let w = self.grid.width;
        Some(self.same[(p.y * self.window.half_len() + h) * w + p.x])
    }

    /// `sum_l I_l(p) I_{l+1}(p+d)`.
    pub fn succ(&self, p: Pixel, off: Offset) -> Option<u64> {
        self.partner(p, off)?;
        let o = self.window.index(off)?;
        let w = self.grid.width;
        Some(self.succ[(p.y * self.window.len() + o) * w + p.x])
    }

    /// `sum_l I_l(p)`.
    pub fn sum(&self, p: Pixel) -> u64 {
        self.sum[self.grid.index(p.x, p.y)]
    }
}

/// Streaming accumulator; feed frames in acquisition order.
#[derive(Debug)]
pub struct Accumulator {
    acc: AccumulatorSet,
    /// Batch frames with `radius` zero columns on each side of every row.
    /// Slot 0 holds the last frame of the previous batch.
    buffer: Vec<u16>,
    pending: usize,
    has_previous: bool,
    block_rows: usize,
    /// Scratch for the paired-frame layout of a batch.
    interleaved: Vec<u32>,
    isa: Isa,
}

impl Accumulator {
    pub fn new(grid: Grid, window_radius: usize) -> Result<Self> {
        if window_radius < 1 {
            return Err(Error::invalid("window_radius", "must be >= 1"));
        }
        if grid.width < 2 {
            return Err(Error::invalid("grid", "need at least 2 columns for the diagonal estimate"));
        }
        let window = Window::new(window_radius);
        let blocks = 4 * rayon::current_num_threads().max(1);
        let padded = padded_width(grid.width, window_radius) * grid.height;
        Ok(Self {
            acc: AccumulatorSet::zeros(grid, window),
            buffer: vec![0; padded * (BATCH_FRAMES + 1)],
            pending: 0,
            has_previous: false,
            block_rows: grid.height.div_ceil(blocks).max(1),
            interleaved: Vec::new(),
            isa: Isa::detect(),
        })
    }

    /// Window covering every pixel pair of the grid. Limited to 32x32 grids.
    pub fn full(grid: Grid) -> Result<Self> {
        if grid.width > 32 || grid.height > 32 {
            return Err(Error::invalid(
                "full",
                format!("full correlation needs a grid of at most 32x32, got {}x{}", grid.width, grid.height),
            ));
        }
        Self::new(grid, grid.width.max(grid.height) - 1)
    }

    pub fn grid(&self) -> Grid {
        self.acc.grid
    }

    pub fn frames_seen(&self) -> u64 {
        self.acc.frames_seen + self.pending as u64
    }

    fn padded_width(&self) -> usize {
        padded_width(self.acc.grid.width, self.acc.window.radius())
    }

    pub fn push_frame(&mut self, frame: &[u16]) -> Result<()> {
        let grid = self.acc.grid;
        if frame.len() != grid.len() {
            return Err(Error::CorruptStack {
                frame: self.frames_seen(),
                reason: format!("{} pixels, expected {}", frame.len(), grid.len()),
            });
        }
        let pw = self.padded_width();
        let r = self.acc.window.radius();
        let slot = (self.pending + 1) * pw * grid.height;
        for (dst, src) in self.buffer[slot..slot + pw * grid.height]
            .chunks_exact_mut(pw)
            .zip(frame.chunks_exact(grid.width))
        {
            dst[r..r + grid.width].copy_from_slice(src);
        }
        self.pending += 1;
        if self.pending == BATCH_FRAMES {
            self.flush();
        }
        Ok(())
    }

    pub fn finish(mut self) -> AccumulatorSet {
        self.flush();
        self.acc
    }

    fn flush(&mut self) {
        if self.pending == 0 {
            return;
        }
        let fl = self.padded_width() * self.acc.grid.height;
        let first = if self.has_previous { 0 } else { 1 };
        let frames = &self.buffer[first * fl..(self.pending + 1) * fl];
        let nf = frames.len() / fl;
        let new_from = 1 - first;

        // By Cauchy-Schwarz no product sum of the batch exceeds the largest
        // per-pixel sum of squares.
        let peak = frames.iter().copied().max().unwrap_or(0);
        let narrow = peak < 1 << 15 && {
            let mut squares = vec![0u64; fl];
            for frame in frames.chunks_exact(fl) {
                for (s, &v) in squares.iter_mut().zip(frame) {
                    *s += v as u64 * v as u64;
                }
            }
            squares.into_iter().max().unwrap_or(0) <= u32::MAX as u64
        };
        if narrow {
            // Word f holds frame f in its low half and frame f + 1 (or
            // zero after the last frame) in its high half. Rows are stored
            // `[y][f]` so one row of every frame is contiguous.
            let pw = self.padded_width();
            self.interleaved.resize(nf * fl, 0);
            for (i, words) in self.interleaved.chunks_exact_mut(pw).enumerate() {
                let (y, f) = (i / nf, i % nf);
                let lo = &frames[f * fl + y * pw..][..pw];
                match frames.get((f + 1) * fl + y * pw..(f + 1) * fl + (y + 1) * pw) {
                    Some(hi) => {
                        for ((w, &l), &h) in words.iter_mut().zip(lo).zip(hi) {
                            *w = l as u32 | (h as u32) << 16;
                        }
                    }
                    None => {
                        for (w, &l) in words.iter_mut().zip(lo) {
                            *w = l as u32;
                        }
                    }
                }
            }
        }

        let grid = self.acc.grid;
        let window = self.acc.window;
        let rows = self.block_rows;
        let kernel = BlockKernel {
            grid,
            radius: window.radius(),
            frames,
            interleaved: narrow.then_some(&self.interleaved[..]),
            nf,
            new_from,
            isa: self.isa,
        };
        let w = grid.width;
        self.acc
            .same
            .par_chunks_mut(rows * window.half_len() * w)
            .zip(self.acc.succ.par_chunks_mut(rows * window.len() * w))
            .zip(self.acc.sum.par_chunks_mut(rows * w))
            .enumerate()
            .for_each(|(block, ((same, succ), sum))| kernel.run(block * rows, same, succ, sum));

        self.acc.frames_seen += self.pending as u64;
        let last = self.pending;
        self.buffer.copy_within(last * fl..(last + 1) * fl, 0);
        self.has_previous = true;
        self.pending = 0;
    }
}

impl FrameSink for Accumulator {
    fn write_frame(&mut self, frame: &[u16]) -> Result<()> {
        self.push_frame(frame)
    }
}

struct BlockKernel<'a> {
    grid: Grid,
    radius: usize,
    /// Consecutive padded frames; successive products pair every frame
    /// with the next.
    frames: &'a [u16],
    /// The same frames as adjacent pairs, present when every partial sum of
    /// the batch fits in 32 bits.
    interleaved: Option<&'a [u32]>,
    nf: usize,
    /// First frame not yet counted in the same-frame and sum accumulators.
    new_from: usize,
    isa: Isa,
}

impl BlockKernel<'_> {
    /// Position of padded row `y` of frame `f`.
    fn row(&self, f: usize, y: usize) -> Range<usize> {
        let pw = padded_width(self.grid.width, self.radius);
        let start = (f * self.grid.height + y) * pw;
        start..start + pw
    }

    fn run(&self, y0: usize, same: &mut [u64], succ: &mut [u64], sum: &mut [u64]) {
        let w = self.grid.width;
        let h = self.grid.height as i64;
        let r = self.radius as i64;
        let side = 2 * self.radius + 1;
        let half_len = side * side / 2 + 1;
        let chunks = w.div_ceil(LANES);
        let mut narrow_scratch = vec![[0u32; LANES]; side * chunks];
        let mut wide_scratch = vec![0u64; side * w];

        for (ly, sum_row) in sum.chunks_exact_mut(w).enumerate() {
            let y = y0 + ly;
            for f in self.new_from..self.nf {
                let row = &self.frames[self.row(f, y)][self.radius..self.radius + w];
                for (s, &v) in sum_row.iter_mut().zip(row) {
                    *s += v as u64;
                }
            }

            let same_rows = &mut same[ly * half_len * w..(ly + 1) * half_len * w];
            let succ_rows = &mut succ[ly * side * side * w..(ly + 1) * side * side * w];
            for dy in -r..=r {
                let y2 = y as i64 + dy;
                if y2 < 0 || y2 >= h {
                    continue;
                }
                let y2 = y2 as usize;
                let row_start = ((dy + r) as usize * side) * w;

                // Same-frame products, upper half of the window only.
                if dy >= 0 {
                    let dx_from = if dy == 0 { 0 } else { -r };
                    let n_dx = (r - dx_from + 1) as usize;
                    let acc_start = row_start + (dx_from + r) as usize * w - (side * side / 2) * w;
                    let acc = &mut same_rows[acc_start..acc_start + n_dx * w];
                    match self.interleaved {
                        Some(words) => {
                            let pairs = (self.new_from..self.nf).step_by(2).map(|f| (f, f));
                            let t = &mut narrow_scratch[..n_dx * chunks];
                            self.narrow_rows(words, acc, (y, y2), dx_from, pairs, t);
                        }
                        None => {
                            let pairs = (self.new_from..self.nf).map(|f| (f, f));
                            let t = &mut wide_scratch[..n_dx * w];
                            self.wide_rows(acc, (y, y2), dx_from, pairs, t);
                        }
                    }
                }

                let acc = &mut succ_rows[row_start..row_start + side * w];
                let last = self.nf.saturating_sub(1);
                match self.interleaved {
                    Some(words) => {
                        let pairs = (0..last).step_by(2).map(|f| (f, f + 1));
                        self.narrow_rows(words, acc, (y, y2), -r, pairs, &mut narrow_scratch);
                    }
                    None => {
                        let pairs = (0..last).map(|f| (f, f + 1));
                        self.wide_rows(acc, (y, y2), -r, pairs, &mut wide_scratch);
                    }
                }
            }
        }
    }

    /// For consecutive `dx` starting at `dx_from`, one accumulator row each:
    /// `acc[k][x] += sum over (fa, fb) of P_fa(x, y) . P_fb(x + dx_from + k, y2)`
    /// where `P_f` is the interleaved pair of frames `f` and `f + 1`.
    /// Off-grid partners read the zero padding.
    fn narrow_rows(
        &self,
        words: &[u32],
        acc: &mut [u64],
        (y, y2): (usize, usize),
        dx_from: i64,
        pairs: impl Iterator<Item = (usize, usize)>,
        t: &mut [[u32; LANES]],
    ) {
        let w = self.grid.width;
        let chunks = w.div_ceil(LANES);
        let first = (self.radius as i64 + dx_from) as usize;
        let pw = padded_width(w, self.radius);
        let word_row = |f: usize, y: usize| (y * self.nf + f) * pw;
        let offsets: Vec<(usize, usize)> = pairs
            .map(|(fa, fb)| (word_row(fa, y) + self.radius, word_row(fb, y2) + first))
            .collect();
        madd_pairs(self.isa, words, &offsets, chunks, t);
        let lanes = t.as_flattened();
        for (k, acc_row) in acc.chunks_exact_mut(w).enumerate() {
            for (s, &v) in acc_row.iter_mut().zip(&lanes[k * chunks * LANES..]) {
                *s += v as u64;
            }
        }
    }

    /// Exact 64-bit version of [`Self::narrow_rows`] on plain frames.
    fn wide_rows(
        &self,
        acc: &mut [u64],
        (y, y2): (usize, usize),
        dx_from: i64,
        pairs: impl Iterator<Item = (usize, usize)>,
        t: &mut [u64],
    ) {
        let w = self.grid.width;
        let first = (self.radius as i64 + dx_from) as usize;
        t.fill(0);
        for (fa, fb) in pairs {
            let a = &self.frames[self.row(fa, y)][self.radius..self.radius + w];
            let b_row = &self.frames[self.row(fb, y2)];
            for (k, t) in t.chunks_exact_mut(w).enumerate() {
                let b = &b_row[first + k..first + k + w];
                for ((t, &a), &b) in t.iter_mut().zip(a).zip(b) {
                    *t += a as u64 * b as u64;
                }
            }
        }
        for (s, &v) in acc.iter_mut().zip(t.iter()) {
            *s += v;
        }
    }
}

/// Accumulates a whole stream.
pub fn accumulate<S: FrameSource + ?Sized>(source: &mut S, window_radius: usize) -> Result<AccumulatorSet> {
    let mut acc = Accumulator::new(source.grid(), window_radius)?;
    while let Some(frame) = source.next_frame()? {
        acc.push_frame(frame)?;
    }
    Ok(acc.finish())
}
