use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("sequence error in '{source_id}': {msg}")]
    Sequence { source_id: String, msg: String },

    #[error("unsupported archive version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("corrupt archive: {0}")]
    Corrupt(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("missing root joint (Neck)")]
    MissingRoot,

    #[error("invalid depth {0}; must be > 0")]
    InvalidDepth(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged{}: loss {loss} at epoch {epoch}", phase.map(|p| format!(" in phase {p}")).unwrap_or_default())]
    Diverged {
        phase: Option<usize>,
        epoch: usize,
        loss: f64,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
