use std::path::PathBuf;

use crate::ops::OperatorClass;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message} (line {line}, column {column})")]
    Schema {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("overlap table has no entry for pair ({0}, {1})")]
    MissingOverlap(OperatorClass, OperatorClass),

    #[error("no measured time for segment pair {0}")]
    MissingSegment(String),

    #[error("cycle detected in operator graph")]
    Cycle,

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema { .. } | Error::UnknownPreset(_) | Error::Json(_) => 2,
            Error::Cycle | Error::Io { .. } => 2,
            Error::Infeasible(_) => 3,
            Error::MissingOverlap(..) | Error::MissingSegment(_) => 4,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn schema(path: impl Into<String>, err: &serde_json::Error) -> Self {
        Error::Schema {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
