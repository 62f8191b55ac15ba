use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum RacError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("duplicate passage id `{0}`")]
    DuplicatePassage(String),

    #[error("unknown passage id `{0}`")]
    UnknownPassage(String),

    #[error("requested {k} passages but the index only holds {available}")]
    NotEnoughPassages { k: usize, available: usize },

    #[error("sequence of length {len} exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("role contract violated: {0}")]
    RoleContract(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("chosen and rejected sequences are identical (record {0})")]
    IdenticalPair(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("probability vector not normalised (sum = {0})")]
    Unnormalised(f64),

    #[error("generation produced no tokens after retry (seed {0})")]
    EmptyGeneration(u64),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<RacError>,
    },

    #[error("malformed record at {path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = RacError> = std::result::Result<T, E>;

impl RacError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        RacError::InvalidConfig(msg.into())
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            already @ RacError::Stage { .. } => already,
            other => RacError::Stage {
                stage: stage.to_string(),
                source: Box::new(other),
            },
        }
    }
}
