use thiserror::Error;

/// Errors produced by loaders, builders and the trainer.
#[derive(Error, Debug)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: duplicate rating for (user {user}, item {item})")]
    DuplicateRating {
        line: usize,
        user: String,
        item: String,
    },

    #[error("line {line}: rating {rating} outside scale [{min}, {max}]")]
    RatingOutOfScale {
        line: usize,
        rating: f64,
        min: f64,
        max: f64,
    },

    #[error("line {line}: expected {expected} fields, found {found}")]
    Arity {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: duplicate item id {item}")]
    DuplicateItem { line: usize, item: String },

    #[error("unknown {kind} id: {id}")]
    UnknownId { kind: &'static str, id: String },

    #[error("matrix is empty")]
    EmptyMatrix,

    #[error("empty prediction list")]
    EmptyPredictions,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("similarity cache is stale: {0}")]
    StaleSimilarity(String),

    #[error("training diverged at epoch {epoch}: non-finite model entry")]
    Diverged { epoch: usize },

    #[error("index {index} out of range ({kind} count is {len})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
