use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A matrix (or bordered extension of one) is not numerically positive definite.
    #[error("matrix is not positive definite (pivot {pivot}, value {value:e})")]
    Conditioning { pivot: usize, value: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Every remaining candidate was infeasible during greedy selection.
    #[error("local design stalled at size {size}: no feasible candidate")]
    DesignStall { size: usize },

    #[error("{failed} of {total} predictive locations failed")]
    FailureThreshold { failed: usize, total: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
