//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CvpError>;

#[derive(Debug, Error)]
pub enum CvpError {
    /// Invalid configuration (sizes, rates, missing fields).
    #[error("config error: {0}")]
    Config(String),

    /// Shape or dimension mismatch between tensors or datasets.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed or inconsistent input data (CSV rows, labels, ids).
    #[error("data error: {0}")]
    Data(String),

    /// A kernel produced NaN/Inf, or a loss went non-finite during training.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(String),
}

impl CvpError {
    pub fn config(msg: impl Into<String>) -> Self {
        CvpError::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        CvpError::Shape(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CvpError::Data(msg.into())
    }

    pub fn non_finite(msg: impl Into<String>) -> Self {
        CvpError::NonFinite(msg.into())
    }
}
