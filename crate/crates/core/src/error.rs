use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("softmax row {row} is fully masked")]
    FullyMasked { row: usize },

    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("parameter `{0}` has no gradient; run backward before stepping")]
    MissingGrad(String),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("span ({start}, {end}) outside the {len} unmasked positions")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("expected exactly 2 question objects, got {0}")]
    QuestionObjectCount(usize),

    #[error("{0}")]
    Config(String),

    #[error("malformed dataset at `{path}`: {detail}")]
    Dataset { path: String, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("non-finite dev loss after epoch {epoch}")]
    NonFiniteDev { epoch: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
