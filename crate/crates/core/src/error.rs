//! Error taxonomy shared by the library and the CLI.
//!
//! Every variant maps to a stable machine-readable kind tag so callers can
//! branch without string-matching messages.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input data. `offset` is the byte position where parsing
    /// failed, when one is meaningful.
    #[error("{msg} (byte {offset})")]
    Format { msg: String, offset: usize },

    #[error("{0}")]
    Geometry(String),

    #[error("{0}")]
    Config(String),

    /// A request exceeded a hard capacity limit (enumeration too large,
    /// candidate family too big).
    #[error("{0}")]
    Capacity(String),

    /// The sampler cannot make progress from the current state.
    #[error("{0}")]
    Stall(String),

    /// Evidence violates a hard constraint, or a network component has no
    /// satisfying assignment at all.
    #[error("inconsistent evidence: {0}")]
    InconsistentEvidence(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(msg: impl Into<String>, offset: usize) -> Self {
        Error::Format { msg: msg.into(), offset }
    }

    /// Stable tag used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Geometry(_) => "geometry",
            Error::Config(_) => "config",
            Error::Capacity(_) => "capacity",
            Error::Stall(_) => "stall",
            Error::InconsistentEvidence(_) => "inconsistent-evidence",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
