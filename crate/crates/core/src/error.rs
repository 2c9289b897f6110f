use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimators and their supporting machinery.
#[derive(Debug, Error)]
pub enum CovError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An iterative routine stopped before meeting its tolerance. `best` is the
    /// last iterate it produced.
    #[error("numerical failure: {message} (best estimate {best})")]
    NumericalFailure { message: String, best: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, CovError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CovError {
    CovError::InvalidInput(msg.into())
}
