use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid transition: {0}")]
    InvalidTransition(String),

    #[error("malformed template {0}: no <ITEM> placeholder")]
    MalformedTemplate(usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("cosine similarity undefined for zero-norm vector")]
    UndefinedSimilarity,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index out of range: {what} {index} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("non-finite value in forward pass")]
    NonFiniteForward,

    #[error("non-finite loss, update aborted: {0}")]
    AbortUpdate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("satisfaction gain undefined: baseline score is zero")]
    UndefinedGain,

    #[error("config: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("{0}")]
    Run(String),

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
