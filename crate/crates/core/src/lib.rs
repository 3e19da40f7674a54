//! Separating an image formed by position-correlated photon pairs from a
//! superimposed classical image, using intensity correlations measured on
//! raw camera frames.
//!
//! The crate covers the full chain: photon-level simulation of both light
//! sources ([`optics`], [`simulate`]), an EMCCD-style detector
//! ([`camera`]), single-pass correlation of frame stacks ([`correlator`]),
//! image distillation ([`distill`]) and signal-to-noise analysis ([`snr`]),
//! plus the on-disk formats used by the command-line tool ([`qdif`],
//! [`container`], [`export`], [`config`]).

// NaN must fail parameter checks, so they are written as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod config;
pub mod container;
pub mod correlator;
pub mod distill;
pub mod error;
pub mod export;
pub mod image;
pub mod optics;
pub mod qdif;
pub mod simulate;
pub mod snr;
pub mod stack;

pub use error::{Error, Result};
