//! Error types shared by every module.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error class, used by the CLI to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments, impossible requests, unreachable targets.
    Config,
    /// Files that do not parse or do not satisfy the data invariants.
    Data,
    /// Inputs that are structurally valid but numerically degenerate
    /// (zero variance, zero vectors, single-class folds).
    Degenerate,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File-level format violation (bad magic, malformed header, ...).
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// Row-level violation; `row` is the 1-based data row (header excluded).
    #[error("{path}: row {row}: {detail}")]
    Row {
        path: PathBuf,
        row: usize,
        detail: String,
    },

    /// Attribute table and embedding set disagree on image ids.
    #[error("attribute table missing {n_missing} embedding id(s), first: {first:?}")]
    IdMismatch { n_missing: usize, first: Vec<String> },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("calibration target unreachable: {0}")]
    Unreachable(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArg(_) | Error::Unreachable(_) => ErrorKind::Config,
            Error::Degenerate(_) => ErrorKind::Degenerate,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn row(path: impl Into<PathBuf>, row: usize, detail: impl Into<String>) -> Self {
        Error::Row {
            path: path.into(),
            row,
            detail: detail.into(),
        }
    }

    pub(crate) fn id_mismatch(missing: Vec<String>) -> Self {
        let n_missing = missing.len();
        let first = missing.into_iter().take(8).collect();
        Error::IdMismatch { n_missing, first }
    }
}
