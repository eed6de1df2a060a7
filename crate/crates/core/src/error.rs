use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("dimension mismatch: expected {expected}, got {actual}{}", context_suffix(.context))]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: Option<String>,
    },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid record {id:?}: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("checksum mismatch: header says {expected}, body hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no labeled hits to vote with")]
    NoLabeledHits,

    #[error("hit {0:?} has no label")]
    MissingLabel(String),

    #[error("hit {0:?} has no target_months")]
    MissingTarget(String),

    #[error("no scorable class: every class lacks either a positive or a negative")]
    NoScorableClass,

    #[error("degenerate labels: need at least one positive and one negative")]
    DegenerateLabels,

    #[error("volume {volume:?}: {message}")]
    InconsistentVolume { volume: String, message: String },

    #[error("aggregation mismatch: index uses {index}, query uses {query}")]
    AggregationMismatch { index: String, query: String },

    #[error("empty hit list")]
    EmptyHits,

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
}

fn context_suffix(context: &Option<String>) -> String {
    match context {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

impl Error {
    /// Strips any line-number wrapping.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLine { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn at_line(self, line: usize) -> Self {
        Error::AtLine {
            line,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dimension(expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            expected,
            actual,
            context: None,
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
