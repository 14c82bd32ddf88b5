use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (bad shape, out-of-range id, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An operation was called against inconsistent internal state,
    /// e.g. a backward pass fed a cache from a different forward call.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A numerical oracle (finite differences) hit a non-finite evaluation.
    #[error("oracle failure: {0}")]
    OracleFailure(String),

    /// Synthetic data generation could not satisfy its constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// A serialized file is malformed; `offset` is the byte position of the
    /// first inconsistency when known.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A serialized file declares a version this build does not understand.
    #[error("version mismatch: file declares {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    /// Training produced a non-finite loss or gradient.
    #[error("numerical failure at iteration {iteration}: {message}")]
    NonFinite { iteration: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
