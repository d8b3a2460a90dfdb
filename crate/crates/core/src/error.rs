use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown format `{0}`")]
    UnknownFormat(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class `{label}` has {count} example(s), need at least {needed}")]
    ClassTooSmall {
        label: String,
        count: usize,
        needed: usize,
    },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("context overflow: prefix already holds {len} of {capacity} positions")]
    ContextOverflow { len: usize, capacity: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("lexicon format: {0}")]
    LexiconFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
