//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VdimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch at {site}: expected {expected}, got {got}")]
    Shape {
        site: String,
        expected: String,
        got: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, VdimError>;

impl VdimError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        VdimError::InvalidInput(msg.into())
    }

    pub fn shape(site: impl Into<String>, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        VdimError::Shape {
            site: site.into(),
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }
}
