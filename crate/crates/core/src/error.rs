use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the simulation, scoring and learning stack.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ordering, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A file on disk does not match the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// NaN or infinity appeared where only finite values are allowed.
    #[error("numeric fault: {0}")]
    NumericFault(String),

    /// Phantom generation produced an unusable volume.
    #[error("generation error: {0}")]
    Generation(String),

    /// The environment could not produce a valid episode start.
    #[error("environment error: {0}")]
    Environment(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericFault(msg.into())
    }
}
