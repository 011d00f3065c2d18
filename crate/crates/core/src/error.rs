use std::path::PathBuf;

use retinexdual_autograd::ScanError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image is {height}x{width}; at least {min}x{min} is required")]
    TooSmall { height: usize, width: usize, min: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(transparent)]
    Scan(#[from] ScanError),

    #[error("non-finite loss at step {step}: {breakdown}")]
    NonFiniteLoss { step: usize, breakdown: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unpaired files in dataset: {0:?}")]
    Unpaired(Vec<String>),

    #[error("{identifier}: {message}")]
    Image { identifier: String, message: String },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("image of {pixels} pixels exceeds the single-pass limit of {limit}; restore it in tiles")]
    TooLarge { pixels: usize, limit: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}
