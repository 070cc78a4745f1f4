use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unbalanced braces near line {line}")]
    UnbalancedBraces { line: usize },
    #[error("no contract declaration found")]
    EmptySource,
    #[error("no contract named `{0}`")]
    UnknownContract(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SliceError {
    #[error("function `{0}` is not in the call graph")]
    UnknownRoot(String),
    #[error("function `{0}` not found in contract")]
    UnknownFunction(String),
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("text produced no tokens")]
    ZeroVector,
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider returned {got} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("batch item {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<EmbeddingError>,
    },
}

impl EmbeddingError {
    /// Index of the failing item for batch errors.
    pub fn batch_index(&self) -> Option<usize> {
        match self {
            EmbeddingError::Batch { index, .. } => Some(*index),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("entry `{0}` already exists")]
    DuplicateId(String),
    #[error("dimension mismatch: store has {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store: {0}")]
    CorruptStore(String),
    #[error("verification failed: {0}")]
    VerificationFailed(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("language-model provider unavailable: {0}")]
    Unavailable(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("risk score needs all three layers; missing {0}")]
    MissingLayer(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("parse failure: {0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("invalid input: {0}")]
    Invalid(String),
}
