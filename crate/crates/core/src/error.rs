use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("manifest has no layers")]
    EmptyManifest,

    #[error("layer {index}: {reason}")]
    InvalidLayer { index: usize, reason: String },

    #[error("layer at position {position} has index {found}, expected {position}")]
    NonContiguousIndex { position: usize, found: usize },

    #[error("layer range [{start}, {end}] is out of bounds for {len} layers")]
    RangeOutOfBounds { start: usize, end: usize, len: usize },

    #[error("number of partitions must be at least 1")]
    ZeroPartitions,

    #[error("cannot split {layers} layers into {partitions} partitions")]
    TooManyPartitions { partitions: usize, layers: usize },

    #[error("invalid partition plan: {0}")]
    InvalidPlan(String),

    #[error("normalization maxima must be positive")]
    ZeroNormalization,

    #[error("all capability scores are zero")]
    AllZeroScores,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid node: {0}")]
    InvalidNode(String),

    #[error("invalid task request: {0}")]
    InvalidTask(String),

    #[error("invalid scheduler config: {0}")]
    InvalidConfig(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("duplicate node `{0}`")]
    DuplicateNode(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("node `{0}` has no in-flight task to complete")]
    TaskCountUnderflow(String),

    #[error("node cpu must be positive")]
    ZeroCpu,

    #[error("invalid execution model: {0}")]
    InvalidExecModel(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("report schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("simulation invariant violated: {0}")]
    Invariant(String),
}
