//! Crate-wide error type and result alias.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or configuration value.
    #[error("validation: {0}")]
    Validation(String),

    /// Tensor shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// On-disk corpus failed an integrity check.
    #[error("corrupt corpus: {0}")]
    CorruptCorpus(String),

    /// On-disk checkpoint failed an integrity check.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// Serialized artifact was written by an incompatible format version.
    #[error("format version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: validation and artifact integrity
    /// problems exit 2, training divergence exits 3, everything else 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Shape(_)
            | Error::CorruptCorpus(_)
            | Error::CorruptCheckpoint(_)
            | Error::VersionMismatch { .. }
            | Error::Config(_) => 2,
            Error::Divergence(_) => 3,
            _ => 1,
        }
    }
}
