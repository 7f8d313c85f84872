use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Input was well-formed but degenerate (e.g. normalizing a zero vector).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A binary or text file could not be decoded.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A text record could not be parsed.
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    /// A configuration value was out of range or unknown.
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// An objective or training run produced a non-finite or exploding value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
