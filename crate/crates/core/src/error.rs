use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Io,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("line {line}: candidate {candidate} uses method {method:?} which is not in the allowed set {allowed:?}")]
    UnknownMethod {
        line: usize,
        candidate: usize,
        method: String,
        allowed: Vec<String>,
    },

    #[error("line {line}: candidate {candidate} of example {id:?} is missing a score for metric {metric:?}")]
    MissingScore {
        line: usize,
        id: String,
        candidate: usize,
        metric: String,
    },

    #[error("line {line}: duplicate example id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("metric {0:?} is already registered")]
    DuplicateMetric(String),

    #[error("unknown metric {name:?}; registered metrics are {registered:?}")]
    UnknownMetric {
        name: String,
        registered: Vec<String>,
    },

    #[error("n-gram order must be at least 1")]
    ZeroNgramOrder,

    #[error("novelty is undefined: summary has {len} tokens, fewer than n = {n}")]
    UndefinedNovelty { len: usize, n: usize },

    #[error("correlation is undefined for constant or too-short input")]
    UndefinedCorrelation,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("baseline value for {metric:?} must be positive, got {value}")]
    NonPositiveBaseline { metric: String, value: f64 },

    #[error("example {id:?} has no candidates for methods {methods:?}")]
    EmptyPool { id: String, methods: Vec<String> },

    #[error("pool of {pool} candidates is too small to keep {m_top} top and {m_bottom} bottom")]
    PoolTooSmall {
        pool: usize,
        m_top: usize,
        m_bottom: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("features missing for example {id:?}, candidate {index}")]
    MissingFeatures { id: String, index: usize },

    #[error("ragged feature vectors: expected dimension {expected}, found {found} for example {id:?}, candidate {index}")]
    RaggedFeatures {
        expected: usize,
        found: usize,
        id: String,
        index: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("every expert is masked out")]
    AllExpertsMasked,

    #[error("test-time methods {test:?} are not a subset of the training methods {train:?}")]
    MethodsNotSubset {
        test: Vec<String>,
        train: Vec<String>,
    },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("model file checksum mismatch (file truncated or corrupted)")]
    Checksum,

    #[error("model metric order {found:?} does not match expected {expected:?}")]
    MetricOrderMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("example id {0:?} appears in both halves")]
    Leakage(String),

    #[error("provenance: {0}")]
    Provenance(String),

    #[error("non-finite value detected: {0}")]
    NonFinite(String),

    #[error("json: {0}")]
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
            Error::Io { .. } => ErrorClass::Io,
            Error::NonFinite(_) => ErrorClass::Numeric,
            _ => ErrorClass::Validation,
        }
    }
}
