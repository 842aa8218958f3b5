//! Crate-wide error type.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("invalid trajectory for {algorithm} on {instance}: {reason}")]
    Trajectory {
        algorithm: String,
        instance: String,
        reason: String,
    },

    #[error("budget exceeded: requested t={requested} beyond run horizon {horizon}")]
    BudgetExceeded { requested: f64, horizon: f64 },

    #[error("unknown algorithm index {0}")]
    UnknownAlgorithm(usize),

    #[error("algorithm id {0:?} already registered")]
    DuplicateAlgorithm(String),

    #[error("ratings row off the simplex (sum deviates by {0:.3e})")]
    NotSimplex(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite log density in block {block}")]
    NonFinite { block: String },

    #[error("Cholesky factorization failed at pivot {pivot} (matrix not positive definite)")]
    Cholesky { pivot: usize },

    #[error("optimizer failed: {0}")]
    Optimize(String),

    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error in {what}: {reason}")]
    Parse { what: String, reason: String },
}

impl Error {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
