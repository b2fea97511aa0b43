use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("instance `{0}` not found")]
    NotFound(String),
    #[error("instance `{0}` is already labeled")]
    AlreadyLabeled(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid template: {0}")]
    Template(String),
    #[error("unparseable generation")]
    Unparseable,
    #[error("http request to {url} failed: {message}")]
    Http {
        url: String,
        status: Option<u16>,
        message: String,
    },
    #[error("remote protocol violation: {0}")]
    Protocol(String),
    #[error("annotation: {0}")]
    Annotation(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
