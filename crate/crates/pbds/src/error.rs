//! Library-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("chart {chart} out of range for manifold with {count} charts")]
    InvalidChart { chart: usize, count: usize },

    #[error("point off manifold: {0}")]
    OffManifold(String),

    #[error("chart transition undefined: {0}")]
    SingularTransition(String),

    #[error("positive-reals coordinate must be > 0, got {0}")]
    NonPositiveCoordinate(f64),

    #[error("metric singular or badly conditioned (cond ~ {cond:.3e})")]
    SingularMetric { cond: f64 },

    #[error("embedding jacobian is rank deficient at the queried point")]
    RankDeficientEmbedding,

    #[error("constraint distance {distance} <= 0 for task `{task}`")]
    ConstraintViolated { task: String, distance: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
