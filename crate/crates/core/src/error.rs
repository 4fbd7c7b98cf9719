use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no content between markers ({0})")]
    NoContent(String),

    #[error("author without documents: {0}")]
    AuthorWithoutDocuments(String),

    #[error("invalid tag scheme: {0}")]
    InvalidScheme(String),

    #[error("tag not single-token: {0}")]
    TagNotSingleToken(String),

    #[error("context overflow: sequence length {len} exceeds model context {context}")]
    ContextOverflow { len: usize, context: usize },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("empty sentence")]
    EmptySentence,

    #[error("empty query set: no tokens after tag span")]
    EmptyQuerySet,

    #[error("numerical failure: non-finite gradient at alpha={alpha}")]
    NumericalFailure { alpha: f64 },

    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown backend: {0}")]
    UnknownBackend(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
