use std::path::PathBuf;

use crate::diffcore::DiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("invalid cell `{id}`: {violations}")]
    InvalidCell { id: String, violations: String },

    #[error("space mismatch: expected {expected}, found {found}")]
    SpaceMismatch { expected: String, found: String },

    #[error("cannot draw {requested} distinct cells; the space holds only {capacity}")]
    CapacityExceeded { requested: usize, capacity: u64 },

    #[error("cell has no input-to-output path")]
    NoPath,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at step {step} (tasks {task_ids:?})")]
    NonFiniteLoss { step: usize, task_ids: Vec<usize> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
