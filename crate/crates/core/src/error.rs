use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A row of an interaction log could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An operation received an empty dataset it cannot work with.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// Invalid configuration (fractions, dimensions, variant mismatches, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A user or item id fell outside the model's id space.
    #[error("index out of range: {0}")]
    Index(String),

    /// Two arrays that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller violated an operation's contract (e.g. scored a padding step).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
