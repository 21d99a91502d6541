//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by schedule construction, model evaluation, file formats,
/// and metric computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("numerical abort: {0}")]
    NumericalAbort(String),

    #[error("variance mismatch between posteriors: {a} vs {b}")]
    VarianceMismatch { a: f64, b: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
