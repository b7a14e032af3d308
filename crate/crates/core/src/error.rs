use thiserror::Error;

/// Errors raised across the editing toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition (shapes, ranges, options).
    #[error("usage error: {0}")]
    Usage(String),

    /// A loss or objective became non-finite.
    #[error("numeric error at iteration {iteration}: {message}")]
    Numeric { iteration: usize, message: String },

    /// Input data is inconsistent with the model or vocabulary.
    #[error("data error: {0}")]
    Data(String),

    /// A persisted file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A new codebook key collides with an existing one.
    #[error("edit conflict: {0}")]
    EditConflict(String),

    /// A linear system is singular or numerically degenerate.
    #[error("singular system: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
