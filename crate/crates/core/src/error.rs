use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Capability,
    Data,
    Backend,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Capability => "capability",
            ErrorClass::Data => "data",
            ErrorClass::Backend => "backend",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backend capability missing: {0}")]
    Capability(String),

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("token alignment failed: {0}")]
    Alignment(String),

    #[error("token `{0}` is not in the model vocabulary")]
    OutOfVocabulary(String),

    #[error("enumeration refused: {sequences} sequences exceeds the limit of {limit}")]
    EnumerationTooLarge { sequences: u128, limit: u128 },

    #[error("demonstration `{id}` has no {side} response")]
    MissingResponse { id: String, side: &'static str },

    #[error("empty sequence has no normalized score")]
    EmptySequence,

    #[error("cannot rank candidates with mixed scorer tags")]
    MixedScorerTags,

    #[error("embedding failed for document {doc_id}: {message}")]
    Embedding { doc_id: usize, message: String },

    #[error("pool holds {available} records but {requested} demonstrations were requested")]
    PoolTooSmall { available: usize, requested: usize },

    #[error("every candidate failed scoring: {}", .0.join(" | "))]
    AllCandidatesFailed(Vec<String>),

    #[error("{0}")]
    Data(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorClass::Config,
            Error::Capability(_) => ErrorClass::Capability,
            Error::Transport { .. } | Error::Alignment(_) | Error::Embedding { .. } => {
                ErrorClass::Backend
            }
            _ => ErrorClass::Data,
        }
    }

    /// Whether retrying the same request could succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
