use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file at byte offset {offset}: {msg}")]
    Corrupt { offset: u64, msg: String },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("unsupported image: {0}")]
    Image(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("autodiff usage error: {0}")]
    Usage(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
