use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite function value {value} when perturbing coordinate {coordinate}")]
    NonFinite { coordinate: usize, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("tokenizer has not been trained")]
    Untrained,
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: u32 },
    #[error("position {0} carries no modality tag")]
    Untagged(usize),
    #[error("stream of length {len} exceeds the {max} supported positions")]
    Overlength { len: usize, max: usize },
    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Empty(_) => "empty",
            Error::Untrained => "untrained",
            Error::TokenOutOfRange { .. } => "token_out_of_range",
            Error::Untagged(_) => "untagged",
            Error::Overlength { .. } => "overlength",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
