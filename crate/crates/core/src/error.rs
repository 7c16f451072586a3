use thiserror::Error;

/// Errors produced by the matching engine and its file formats.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("degenerate window: intensity variance below {threshold:e}")]
    DegenerateWindow { threshold: f64 },

    #[error("degenerate template: weighted variance below {threshold:e}")]
    DegenerateTemplate { threshold: f64 },

    #[error("no valid window: every candidate window is degenerate")]
    NoValidWindow,

    #[error("placement failed: {0}")]
    Placement(String),

    #[error("parse error at byte {offset}: {message}")]
    ParseAt { offset: usize, message: String },

    #[error("parse error on line {line}: {message}")]
    ParseLine { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}
