//! Error type for service startup, transport, and publishing paths.

use esbench_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Core(#[from] CoreError),
    /// Request-level failure: connect, timeout, malformed body.
    #[error("transport: {0}")]
    Transport(String),
    /// A service could not start (e.g. port already in use).
    #[error("startup: {0}")]
    Startup(String),
    /// The remote side refused the operation.
    #[error("rejected: {0}")]
    Rejected(String),
}

impl From<reqwest::Error> for NetError {
    fn from(e: reqwest::Error) -> Self {
        NetError::Transport(e.to_string())
    }
}
