use thiserror::Error;

/// Error type shared across the simulator, solver, dataset and model layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition (bad dimension, out-of-area
    /// position, negative rate, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed (non-PD system matrix, non-finite value).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An instance is too large for the requested routine.
    #[error("size error: {0}")]
    Size(String),

    /// A persisted file does not match the expected schema.
    #[error("format error: {0}")]
    Format(String),

    /// Configuration file or flag combination is invalid.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn size(msg: impl Into<String>) -> Self {
        Error::Size(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
