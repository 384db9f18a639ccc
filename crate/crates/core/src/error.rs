use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lane {lane}: {reason}")]
    InvalidLane { lane: String, reason: String },

    #[error("invalid exit {exit}: {reason}")]
    InvalidExit { exit: String, reason: String },

    #[error("invalid map {map}: {violations:?}")]
    InvalidMap {
        map: String,
        violations: Vec<String>,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: String },

    #[error("label inconsistent with map: {0}")]
    Label(String),

    #[error("cannot call backward on a tape recorded without labels")]
    NoTape,

    #[error("batch-norm running statistics are not initialised; train before eval")]
    NoRunningStats,

    #[error("infeasible generator config: {0}")]
    Infeasible(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("incompatible artifact: {0}")]
    Incompatible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
