use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate variant {0}")]
    DuplicateVariant(String),

    #[error("cannot split {groups} function groups into {nonzero} non-empty parts")]
    InfeasibleSplit { groups: usize, nonzero: usize },

    #[error("unknown function id `{0}`")]
    UnknownFunction(String),

    #[error("function `{0}` has a single variant and self pairs are disabled")]
    SingletonGroup(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{what} index {index} out of bounds (len {len})")]
    IndexOutOfBounds {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("batch of {batch} rows exceeds queue capacity {capacity}")]
    QueueOverflow { batch: usize, capacity: usize },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("task `{kind}` is infeasible on this corpus: {axis}")]
    InfeasibleTask { kind: String, axis: String },

    #[error("cosine similarity of a zero vector")]
    ZeroVector,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("vocabulary version mismatch: expected {expected}, found {found}")]
    VocabMismatch { expected: u32, found: u32 },

    #[error("index is empty")]
    EmptyIndex,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
