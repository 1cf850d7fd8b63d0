use std::path::PathBuf;

use thiserror::Error;

use crate::calibrate::SnFit;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum GsbmError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine did not reach its tolerance.
    #[error("numeric failure: {message} (achieved tolerance {achieved:e})")]
    Numeric { message: String, achieved: f64 },

    /// A least-squares or likelihood fit could not be produced.
    #[error("fit error: {message}")]
    Fit {
        message: String,
        best: Option<Box<SnFit>>,
    },

    /// Input data could not be parsed or validated.
    #[error("ingestion error in {path}: {}", .problems.join("; "))]
    Ingest {
        path: PathBuf,
        problems: Vec<String>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GsbmError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(GsbmError::Domain(msg.into()))
}
