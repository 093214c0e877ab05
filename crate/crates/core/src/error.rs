use thiserror::Error;

/// Errors produced by simulator operations.
#[derive(Debug, Error)]
pub enum SimError {
    /// Segment plan construction failed (empty model, too many segments, ...).
    #[error("invalid segment plan: {0}")]
    InvalidPlan(String),

    /// Segment index does not exist in the plan.
    #[error("segment index {index} out of range ({count} segments)")]
    InvalidSegment { index: usize, count: usize },

    /// Flattened segment data does not match the plan.
    #[error("corrupt segment: {0}")]
    CorruptSegment(String),

    /// World size too small to pair ranks.
    #[error("invalid world size {0}: need at least 2 ranks")]
    InvalidWorld(usize),

    /// The sequential destination draw kept dead-ending.
    #[error("topology draw failed after {0} restarts")]
    TopologyFailure(usize),

    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),

    /// Worker states disagree on layout, count, or invariants.
    #[error("corrupt worker state: {0}")]
    CorruptState(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid group: {0}")]
    InvalidGroup(String),

    /// A non-finite value entered the optimizer.
    #[error("diverged state: {0}")]
    Diverged(String),

    /// Configuration rejected; names the offending key.
    #[error("config error for `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type SimResult<T> = Result<T, SimError>;
