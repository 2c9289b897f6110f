use std::path::PathBuf;

use cdcov::CovError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or config: exit code 2.
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] CovError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(CovError::InvalidInput(_)) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Csv { path, source }
    }
}
