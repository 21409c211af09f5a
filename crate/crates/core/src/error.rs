use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty stream")]
    EmptyStream,

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid stream {book_id}: {reason}")]
    InvalidStream { book_id: String, reason: String },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt embedding {0}")]
    CorruptEmbedding(String),

    #[error("unknown embedding key {0}")]
    UnknownKey(String),

    #[error("duplicate embedding key {0}")]
    DuplicateKey(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing modality: {0}")]
    MissingModality(String),

    #[error("page {page_id} of book {book_id}: {reason}")]
    Page {
        book_id: String,
        page_id: String,
        reason: String,
    },

    #[error("backward called without a recorded forward pass")]
    EmptyTape,

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("non-finite loss at epoch {epoch}, book {book_id}")]
    Diverged { epoch: usize, book_id: String },

    #[error("book mismatch: {0}")]
    BookMismatch(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("oracle size cap exceeded: {0} pages (max {1})")]
    OracleCap(usize, usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
