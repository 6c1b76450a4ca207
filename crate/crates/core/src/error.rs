use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("degenerate attention row {row}")]
    DegenerateAttentionRow { row: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("empty clip")]
    EmptyClip,
    #[error("degenerate embedding")]
    DegenerateEmbedding,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("no difference specified")]
    NoDifference,
    #[error("IDF undefined: corpus needs at least two items")]
    IdfUndefined,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
