use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid mismatch: expected {expected:?}, found {found:?}")]
    GridMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("corrupt stack at frame {frame}: {reason}")]
    CorruptStack { frame: u64, reason: String },

    #[error("truncated stack: frame {frame} of {expected} is incomplete")]
    Truncated { frame: u64, expected: u64 },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(u64),

    #[error("snr model undefined: {0}")]
    ModelDomain(String),

    #[error("fit rejected: {0}")]
    Fit(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
