use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("corpus is empty after filtering")]
    EmptyCorpus,

    #[error("value out of range: {0}")]
    Range(String),

    #[error("label constraint violated: {0}")]
    Constraint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("problem too large to enumerate: {0}")]
    Size(String),

    #[error("outside the estimator domain: {0}")]
    Domain(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures caused by the numbers themselves rather than by the input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Domain(_))
    }
}
