use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("measurement window: {0}")]
    Measurement(String),

    #[error("{what} shape mismatch: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("environment: {0}")]
    Env(String),

    #[error("incomplete tree: {0}")]
    IncompleteTree(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("non-finite loss at episode {episode}, learner step {step}: {detail}")]
    NonFinite {
        episode: usize,
        step: u64,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("terminal {0} is unreachable")]
    Unreachable(usize),

    #[error("oracle refuses m = {m} edges (limit {limit})")]
    OracleLimit { m: usize, limit: usize },

    #[error("flow table: {0}")]
    Flow(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
