use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vector has (near) zero norm{}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    ZeroNorm { row: Option<usize> },

    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("batch of size {0} is too small, need at least 2")]
    BatchTooSmall(usize),

    #[error("negative score {value} at ({row}, {col})")]
    NegativeScore { row: usize, col: usize, value: f64 },

    #[error("rows must arrive in index order: expected row {expected}, got {got}")]
    RowOrderViolation { expected: usize, got: usize },

    #[error("K = {k} exceeds pool size {pool}")]
    KTooLarge { k: usize, pool: usize },

    #[error("pool size {pool} exceeds the {available} available samples")]
    PoolTooLarge { pool: usize, available: usize },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("non-finite value encountered at training step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checksum mismatch: file is truncated or corrupted")]
    ChecksumMismatch,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: &'static str, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::ShapeMismatch {
            context,
            expected,
            found,
        }
    }
}
