use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backend unreachable: {0}")]
    Unreachable(String),

    #[error("backend returned HTTP {status}: {message}")]
    Server { status: u16, message: String },

    #[error("malformed backend response: {0}")]
    Protocol(String),

    #[error("fixture miss: no recorded response for request {hash} in {dir}")]
    FixtureMiss { hash: String, dir: PathBuf },

    #[error("token at position {index} is not a mask token")]
    NotAMask { index: usize },

    #[error("target token {0:?} not in vocabulary")]
    TargetNotInVocab(String),

    #[error("zero-norm embedding")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate association variance")]
    DegenerateVariance,

    #[error("no shared tokens")]
    NoSharedTokens,

    #[error("metric undefined: every pair is a tie")]
    MetricUndefined,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate points at rows {0} and {1}")]
    DuplicatePoints(usize, usize),

    #[error("perplexity search did not converge for row {row} (entropy {entropy}, target {target})")]
    BisectionFailed { row: usize, entropy: f64, target: f64 },

    #[error("numerical failure at iteration {iteration}: {what}")]
    Numerical { iteration: usize, what: String },

    #[error("{0}")]
    Mismatch(String),

    #[error("invalid config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("missing required hyperparameter {key:?} for {method}")]
    MissingHyperparameter { method: String, key: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Error {
        Error::InvalidArgument(msg.into())
    }
}
