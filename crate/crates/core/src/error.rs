use thiserror::Error;

/// Errors raised by the planning, inference and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipcError {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is singular or ill-conditioned ({context}, condition estimate {condition:.3e})")]
    Singular { context: &'static str, condition: f64 },

    #[error("non-positive-definite pivot at block {block}")]
    RankDeficient { block: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("matrix exponential failed to converge")]
    ExpmDiverged,

    #[error("query at ({x:.3}, {y:.3}) lies outside the distance field extent")]
    OutsideField { x: f64, y: f64 },

    #[error("time {t:.6} outside [{start:.6}, {end:.6}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, PipcError>;
