use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HlgtError>;

#[derive(Debug, Error)]
pub enum HlgtError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {op} in scope `{scope}` (node {node})")]
    NonFinite {
        op: &'static str,
        scope: String,
        node: usize,
    },

    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),

    #[error("backward: {0}")]
    Backward(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },

    #[error("bad magic in feature file {path}: expected \"HLGT\", found {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("unsupported feature file version {found} in {path} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u16,
        expected: u16,
    },

    #[error("truncated feature file {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("manifest {path} line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("sample `{id}`: missing feature file {path}")]
    MissingFeatures { id: String, path: PathBuf },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    Diverged {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<HlgtError>,
    },

    #[error("gradient check: {0}")]
    GradCheck(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HlgtError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HlgtError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from invalid user input or configuration,
    /// as opposed to a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HlgtError::Config(_)
                | HlgtError::Manifest { .. }
                | HlgtError::MissingFeatures { .. }
                | HlgtError::InvalidArgument(_)
                | HlgtError::BadMagic { .. }
                | HlgtError::VersionMismatch { .. }
                | HlgtError::Truncated { .. }
                | HlgtError::Checkpoint(_)
        )
    }
}
