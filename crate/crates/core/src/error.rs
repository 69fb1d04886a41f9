//! Crate-wide error type. Variants name the offending field or artifact so
//! callers can surface actionable messages without string matching.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown product id {0}")]
    UnknownProduct(u64),

    #[error("unknown user id {0}")]
    UnknownUser(u64),

    #[error("catalog and tier assignment disagree: {0}")]
    Inconsistent(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("artifact corrupt: {0}")]
    Corrupt(String),

    #[error("stale artifact version {offered}, current version is {current}")]
    StaleVersion { offered: u64, current: u64 },

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
