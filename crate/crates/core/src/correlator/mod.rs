//! Intensity-correlation estimation from raw frame streams.
//!
//! The product of intensities within one frame contains both genuine and
//! accidental coincidences; the product between successive frames contains
//! only accidental ones. Their difference estimates `Gamma(r1, r2)`.

mod accumulate;
mod result;
mod simd;
mod window;

pub use accumulate::{accumulate, Accumulator, AccumulatorSet};
pub use result::{finalize_gamma, ConditionalImage, CorrelationResult, MinusCoordinateMap, DIAGONAL_NEIGHBOR};
pub use window::{Offset, Window};

use crate::error::Result;
use crate::stack::FrameSource;

/// Streams `source` once and returns the finalized correlation.
pub fn correlate<S: FrameSource + ?Sized>(source: &mut S, window_radius: usize) -> Result<CorrelationResult> {
    finalize_gamma(&accumulate(source, window_radius)?)
}
