//! Shared error type for the core library.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch between operands; names both shapes.
    #[error("dimension error in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    Dim {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller violated an operation's contract.
    #[error("contract error: {0}")]
    Contract(String),

    /// A numeric guard tripped (NaN, overflow, non-finite input).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Bad configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Gaussian statistics requested before the first successful refresh.
    #[error("stale statistics: no refreshed distribution available")]
    Stale,

    /// A metric is undefined for the given input (e.g. single-class AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents (checkpoint, manifest, image).
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
