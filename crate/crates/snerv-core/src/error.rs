//! Crate-wide error type.
//!
//! The variants distinguish the failure classes callers react to
//! differently: bad configuration (a bug in the caller), bad external
//! input (a bad file), I/O, structural corruption of serialized
//! artifacts, version mismatches, checksum failures, and training
//! divergence.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Structurally invalid request: shape mismatch, out-of-range
    /// hyperparameter, inconsistent model configuration.
    #[error("config: {0}")]
    Config(String),

    /// Malformed external data: frames, masks, key=value files.
    #[error("input: {0}")]
    Input(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized artifact failed structural validation (truncated
    /// file, bad magic, inconsistent record lengths).
    #[error("corrupt {kind}: {detail}")]
    Corrupt { kind: &'static str, detail: String },

    /// The artifact is structurally sound but written by an
    /// incompatible format version.
    #[error("unsupported {kind} version {found} (expected {expected})")]
    Version {
        kind: &'static str,
        found: u16,
        expected: u16,
    },

    /// Checksum mismatch on an otherwise well-formed artifact.
    #[error("integrity: {0}")]
    Integrity(String),

    /// Training produced a non-finite loss; carries enough state to
    /// diagnose the divergence.
    #[error("non-finite loss at epoch {epoch}, frame {frame}: {detail}")]
    NonFinite {
        epoch: usize,
        frame: usize,
        detail: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn corrupt(kind: &'static str, detail: impl Into<String>) -> Self {
        Error::Corrupt {
            kind,
            detail: detail.into(),
        }
    }
}
