//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("time {t} outside [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value in {what}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { what: String, step: Option<usize> },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid stage schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid model input: {0}")]
    InvalidModel(String),

    #[error("training did not converge: final loss {final_loss} > threshold {threshold}")]
    NonConvergence { final_loss: f64, threshold: f64 },

    #[error("manifest error at {pointer}: {message}")]
    Manifest { pointer: String, message: String },

    #[error("missing asset: {0}")]
    MissingAsset(String),

    #[error("mask error: {0}")]
    Mask(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("feature provider failure: {0}")]
    Provider(String),

    #[error("vlm failure: {0}")]
    Vlm(String),

    #[error("unparseable answer: {answer:?}")]
    UnparseableAnswer { answer: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape_mismatch(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
