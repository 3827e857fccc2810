use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode error on {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("image encode error on {path}: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("codec backend mismatch: {0}")]
    BackendMismatch(String),
    #[error("weights are not normalized (max per-pixel deviation {deviation:.3e}); pass force to fuse anyway")]
    Unnormalized { deviation: f64 },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("malformed file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
