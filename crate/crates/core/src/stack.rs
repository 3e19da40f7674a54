//! Frame streams: the interchange between simulation and analysis.

use crate::error::{Error, Result};
use crate::image::Grid;

/// Sequential producer of 16-bit frames.
pub trait FrameSource {
    fn grid(&self) -> Grid;

    /// Declared number of frames, when known up front.
    fn n_frames(&self) -> Option<u64>;

    /// Next frame in stream order, or `None` at the end.
    fn next_frame(&mut self) -> Result<Option<&[u16]>>;
}

/// Sequential consumer of 16-bit frames.
pub trait FrameSink {
    fn write_frame(&mut self, frame: &[u16]) -> Result<()>;
}

impl<S: FrameSink + ?Sized> FrameSink for &mut S {
    fn write_frame(&mut self, frame: &[u16]) -> Result<()> {
        (**self).write_frame(frame)
    }
}

/// In-memory frame stack, row-major frames stored back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    grid: Grid,
    exposure_ms: f32,
    data: Vec<u16>,
}

impl FrameStack {
    pub fn new(grid: Grid, exposure_ms: f32) -> Self {
        Self {
            grid,
            exposure_ms,
            data: Vec::new(),
        }
    }

    pub fn from_frames(grid: Grid, exposure_ms: f32, frames: &[Vec<u16>]) -> Result<Self> {
        let mut stack = Self::new(grid, exposure_ms);
        for f in frames {
            stack.write_frame(f)?;
        }
        Ok(stack)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn exposure_ms(&self) -> f32 {
        self.exposure_ms
    }

    pub fn n_frames(&self) -> u64 {
        (self.data.len() / self.grid.len()) as u64
    }

    pub fn frame(&self, index: usize) -> &[u16] {
        let n = self.grid.len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[u16]> {
        self.data.chunks_exact(self.grid.len())
    }

    pub fn reader(&self) -> StackReader<'_> {
        StackReader {
            stack: self,
            next: 0,
        }
    }
}

impl FrameSink for FrameStack {
    fn write_frame(&mut self, frame: &[u16]) -> Result<()> {
        if frame.len() != self.grid.len() {
            return Err(Error::CorruptStack {
                frame: self.n_frames(),
                reason: format!("{} pixels, expected {}", frame.len(), self.grid.len()),
            });
        }
        self.data.extend_from_slice(frame);
        Ok(())
    }
}

pub struct StackReader<'a> {
    stack: &'a FrameStack,
    next: usize,
}

impl FrameSource for StackReader<'_> {
    fn grid(&self) -> Grid {
        self.stack.grid
    }

    fn n_frames(&self) -> Option<u64> {
        Some(self.stack.n_frames())
    }

    fn next_frame(&mut self) -> Result<Option<&[u16]>> {
        if self.next as u64 >= self.stack.n_frames() {
            return Ok(None);
        }
        self.next += 1;
        Ok(Some(self.stack.frame(self.next - 1)))
    }
}

/// Frames held as independent buffers; sizes are not checked until read,
/// which lets tests feed malformed streams.
#[derive(Debug, Clone)]
pub struct VecSource {
    grid: Grid,
    frames: Vec<Vec<u16>>,
    next: usize,
}

impl VecSource {
    pub fn new(grid: Grid, frames: Vec<Vec<u16>>) -> Self {
        Self {
            grid,
            frames,
            next: 0,
        }
    }
}

impl FrameSource for VecSource {
    fn grid(&self) -> Grid {
        self.grid
    }

    fn n_frames(&self) -> Option<u64> {
        Some(self.frames.len() as u64)
    }

    fn next_frame(&mut self) -> Result<Option<&[u16]>> {
        let Some(frame) = self.frames.get(self.next) else {
            return Ok(None);
        };
        self.next += 1;
        Ok(Some(frame))
    }
}

/// Per-pixel temporal mean of a stream.
pub fn mean_image<S: FrameSource + ?Sized>(source: &mut S) -> Result<(Vec<f64>, u64)> {
    let grid = source.grid();
    let mut sums = vec![0u64; grid.len()];
    let mut n = 0u64;
    while let Some(frame) = source.next_frame()? {
        if frame.len() != grid.len() {
            return Err(Error::CorruptStack {
                frame: n,
                reason: format!("{} pixels, expected {}", frame.len(), grid.len()),
            });
        }
        for (s, &v) in sums.iter_mut().zip(frame) {
            *s += v as u64;
        }
        n += 1;
    }
    let mean = sums.iter().map(|&s| s as f64 / n.max(1) as f64).collect();
    Ok((mean, n))
}
