use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatchAtLine {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: duplicate word {word:?}")]
    DuplicateWord { line: usize, word: String },

    #[error("line {line}: non-finite value for word {word:?}")]
    NonFinite { line: usize, word: String },

    #[error("unknown word {0:?}")]
    UnknownWord(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dimension {0} has zero variance")]
    ZeroVariance(usize),

    #[error("need at least {required} rows, found {found}")]
    TooFewRows { required: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation requires a diagonal-mode operator")]
    UnsupportedMode,

    #[error("embeddings must be standardized before training")]
    NotStandardized,

    #[error("need at least 2 relation groups with resolvable pairs, found {0}")]
    TooFewGroups(usize),

    #[error("relation {0:?} has no resolvable prototypes")]
    NoPrototypes(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
