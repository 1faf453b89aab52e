use thiserror::Error;

/// Errors raised by the numerical, learning and control layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("kernel matrix is ill-conditioned at pivot {pivot}; try a larger noise variance")]
    IllConditionedKernel { pivot: usize },

    #[error("integration diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("insufficient data: need {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("unstable transfer function: pole {pole} is not strictly negative")]
    UnstablePole { pole: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
