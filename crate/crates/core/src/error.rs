use thiserror::Error;

use crate::dataset::Channel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lane spec: {0}")]
    InvalidSpec(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("location out of bounds: {0}")]
    OutOfBounds(String),

    #[error("lane has no {0} frames")]
    MissingChannel(Channel),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("SVM solver did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("missing prediction column `{0}`")]
    MissingColumn(String),

    #[error("fold {fold} (lane `{lane}`) has no targets")]
    EmptyFold { fold: usize, lane: String },
}
