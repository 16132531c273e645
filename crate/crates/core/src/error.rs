use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("weight manifest: {0}")]
    Manifest(String),

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("sequence of {len} tokens exceeds context of {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("bias layer {layer} outside 1..={n_layers}")]
    BiasLayerOutOfRange { layer: usize, n_layers: usize },

    #[error("bias shape: {0}")]
    BiasShape(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("token at span offset {offset} is unknown to the vocabulary")]
    UnknownInSpan { offset: usize },

    #[error("prompt weights undefined: {0}")]
    DegenerateWeights(String),

    #[error("need {needed} prompt positions but only {available} are available")]
    InsufficientPositions { needed: usize, available: usize },

    #[error("invalid behavioral record: {0}")]
    InvalidRecord(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("query {query} out of range for sequence of {len}")]
    QueryOutOfRange { query: usize, len: usize },

    #[error("attention row sums to {sum}, not 1")]
    UnnormalizedRow { sum: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("seed {seed} diverged at epoch {epoch}: {detail}")]
    Divergence {
        seed: usize,
        epoch: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from bad input (as opposed to a failure while
    /// computing or writing results).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Divergence { .. } | Error::NonFinite(_) => false,
            Error::Io(e) => e.kind() == std::io::ErrorKind::NotFound,
            _ => true,
        }
    }
}
