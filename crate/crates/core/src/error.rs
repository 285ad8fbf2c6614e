use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("line {line}: rating out of range: {rating} for ({user}, {item}) outside [{min}, {max}]")]
    RatingOutOfRange {
        line: usize,
        user: String,
        item: String,
        rating: f64,
        min: f64,
        max: f64,
    },

    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    Shape {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown {kind} index {index} (have {len})")]
    UnknownId {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("filtering removed all data")]
    FilteredEmpty,

    #[error("inconsistent planted mapping: {0}")]
    Mapping(String),

    #[error("stage {requested} cannot run: last completed stage is {completed}")]
    StageOrder { requested: u8, completed: u8 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("vocabulary fingerprint mismatch: checkpoint {stored}, dataset {actual}")]
    Fingerprint { stored: String, actual: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: u8,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
