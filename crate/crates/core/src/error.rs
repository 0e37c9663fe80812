use std::path::PathBuf;

use fastmatch_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: u64, message: String },

    #[error("{0}")]
    Precondition(String),

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Coarse error classes, stable for machine consumption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Config,
    DataFormat,
    Runtime,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::DataFormat => "data-format",
            Category::Runtime => "runtime",
        }
    }
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) => Category::Config,
            Error::Format { .. } => Category::DataFormat,
            Error::Tensor(TensorError::Checkpoint(_)) => Category::DataFormat,
            Error::Precondition(_) | Error::MissingArtifact(_) | Error::Tensor(_) | Error::Io { .. } => Category::Runtime,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
