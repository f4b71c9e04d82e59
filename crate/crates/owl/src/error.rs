//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, OwlError>;

#[derive(Debug, Clone, Error)]
pub enum OwlError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric: max deviation {max_dev:e} exceeds {tol:e}")]
    NotSymmetric { max_dev: f64, tol: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("samples have no spread; kernel bandwidth would vanish")]
    InsufficientSpread,

    #[error("operation requires the {required} noise model")]
    NoiseModeMismatch { required: &'static str },

    #[error("operation supports scalar output only (got d = {got})")]
    ScalarOutputOnly { got: usize },

    /// Fixed-point iteration left the admissible region. Carries the
    /// `(alpha, nu)` iterate history up to the failure.
    #[error("fixed-point iteration diverged after {iterations} iterations")]
    Divergence {
        iterations: usize,
        history: Vec<(f64, f64)>,
    },

    #[error("unknown name `{0}`; valid options: {1}")]
    UnknownName(String, String),
}
