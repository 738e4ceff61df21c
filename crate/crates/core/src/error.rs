use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator, the detectors and the calibration tools.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("threshold table incompatible with runtime configuration: {0}")]
    TableMismatch(String),

    #[error("malformed threshold table: {0}")]
    TableFormat(String),

    #[error("insufficient calibration samples: have {have}, need at least {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error("invalid table index: {0}")]
    InvalidIndex(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dim(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
