//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A formula was evaluated outside its mathematical domain.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// Mesh or graph structure is inconsistent (counts, ranges, degrees).
    #[error("inconsistent mesh: {0}")]
    InconsistentMesh(String),

    /// A persisted artifact failed validation (checksum, version, shape).
    #[error("corrupt artifact at {path}: {reason}")]
    CorruptArtifact { path: String, reason: String },

    /// Checkpoint or dataset format version not understood.
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    /// Training loss became non-finite.
    #[error("training diverged at step {step}: loss is not finite")]
    TrainingDiverged { step: usize },

    /// Rollout produced a non-finite node position.
    #[error("rollout produced a non-finite prediction at step {step}, node {node}")]
    RolloutDiverged { step: usize, node: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::OutOfDomain(msg.into())
    }
}
