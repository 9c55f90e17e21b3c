use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the selection pipeline.
///
/// Variants are grouped so the CLI can map them onto exit codes:
/// configuration problems, bad input data, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("ragged input: row {row} has {found} fields, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("degenerate data")]
    Degenerate,

    #[error("{0}")]
    Numeric(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error classes, used for process exit codes and the C ABI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Parse { .. }
            | Error::Ragged { .. }
            | Error::NonFinite { .. }
            | Error::Data(_)
            | Error::Degenerate
            | Error::Io { .. } => ErrorClass::Data,
            Error::Numeric(_) => ErrorClass::Numeric,
            Error::Stage { source, .. } => source.class(),
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        match self {
            // keep the innermost attribution
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}
