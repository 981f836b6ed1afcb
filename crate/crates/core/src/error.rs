use std::io;

use thiserror::Error;

/// Errors produced by the floor-level pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("timestamps not strictly increasing at row {row}")]
    Ordering { row: usize },

    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },

    #[error("not enough data: {0}")]
    Empty(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("weather series does not cover timestamp {timestamp} (nearest sample {gap} s away)")]
    Coverage { timestamp: i64, gap: i64 },

    #[error("no building entry observed; cannot anchor reference pressure")]
    NoEntryObserved,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
