use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("instance has no positive targets")]
    NoPositives,

    #[error("zero-norm embedding has no direction")]
    ZeroNorm,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("frame index {got} does not advance past {last}")]
    NonIncreasingFrame { last: u64, got: u64 },

    #[error("detection {index} carries no embedding")]
    MissingEmbedding { index: usize },

    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },

    #[error("frame ranges differ: ground truth has {gt} frames, prediction has {pred}")]
    FrameMismatch { gt: usize, pred: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
