use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("image {image} has no mask with the same name in {mask_dir}")]
    MissingMaskPair { image: PathBuf, mask_dir: PathBuf },

    #[error("no image files found in {0}")]
    EmptyDirectory(PathBuf),

    #[error("could not read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },

    #[error("volume payload is {actual} bytes but header shape requires {expected}")]
    VolumeSize { expected: usize, actual: usize },

    #[error("invalid volume header: {0}")]
    VolumeHeader(String),

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("need at least 2 labeled samples to form two views, got {0}")]
    TooFewLabeled(usize),

    #[error("non-finite value in {what} at segmentation step {seg_step}, critic step {critic_step}")]
    NonFinite {
        what: String,
        seg_step: u64,
        critic_step: u64,
    },

    #[error("non-finite output from {0}")]
    NonFiniteOutput(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("reports were computed on different test sets ({0} vs {1})")]
    SplitHashMismatch(String, String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
