use thiserror::Error;

/// Error type shared across the crate.
///
/// The CLI maps variants to exit codes: `Invalid` → 2 (usage/config),
/// `Numerics` → 3, `Format`/`Io` → 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a precondition (shape mismatch, empty input, bad enum value, ...).
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A file did not conform to its on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// A numerical operation failed (non-finite values, singular system, exhausted solver).
    #[error("numerical error: {0}")]
    Numerics(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn numerics(msg: impl Into<String>) -> Self {
        Error::Numerics(msg.into())
    }
}
