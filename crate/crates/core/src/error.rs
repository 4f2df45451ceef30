use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The document does not match the interchange schema.
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    /// The document parsed but violates a structural invariant.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("{what} has size {actual}, limit is {limit}")]
    SizeLimit {
        what: &'static str,
        actual: usize,
        limit: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A forward or backward pass produced NaN or infinity.
    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numeric kind (divergence, NaN).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
