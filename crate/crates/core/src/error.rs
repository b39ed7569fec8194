use thiserror::Error;

/// Errors produced anywhere in the fusion pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("domain error at pixel {index}: {reason}")]
    Domain { index: usize, reason: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("problem too large for the dense oracle: N = {n} > {limit}")]
    Size { n: usize, limit: usize },

    #[error("too few points to triangulate: {0}")]
    TooFewPoints(String),

    #[error("coverage mask is empty")]
    EmptyCoverage,

    #[error("evaluation mask is empty")]
    EmptyMask,

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FusionError {
    fn from(err: std::io::Error) -> Self {
        FusionError::Io(err.to_string())
    }
}

pub type Result<T, E = FusionError> = std::result::Result<T, E>;
