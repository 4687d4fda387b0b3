use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("numerically singular input: {0}")]
    SingularInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{count} atoms exceed the exhaustive enumeration limit of {limit}")]
    TooManyAtoms { count: usize, limit: usize },
    #[error("direction is zero")]
    ZeroDirection,
    #[error("flat of dimension {dim} with mass {mass} does not exceed {dim}/{ambient}")]
    NotDestabilizing { dim: usize, ambient: usize, mass: f64 },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
