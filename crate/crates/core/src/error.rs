use std::path::{Path, PathBuf};

use crate::train::Checkpoint;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller violated an operation's precondition.
    #[error("{0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("span placement failed: {0}")]
    Placement(String),

    #[error("unknown label {label:?} for task {task:?}")]
    UnknownLabel { task: String, label: String },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss; carries the last checkpoint whose loss was finite.
    #[error("loss became non-finite at step {step}")]
    Diverged { step: u64, last_good: Box<Checkpoint> },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op: op.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}
