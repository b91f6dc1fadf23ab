use thiserror::Error;

/// Errors raised across the estimation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid distribution: {0}")]
    InvalidMix(String),

    #[error("invalid routing matrix: {0}")]
    InvalidMatrix(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("no acceptable evaluation points after {attempts} attempts (best condition number {best_condition:.3e})")]
    TauRejected { attempts: usize, best_condition: f64 },

    #[error("singular or ill-conditioned matrix (condition number {condition:.3e})")]
    Singular { condition: f64 },

    #[error("composition has no stage below the last rate; constant term, no expansion")]
    ConstantTerm,

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("clustering failed: relation is not transitive after {retries} retries (offending pairs: {pairs:?})")]
    Clustering {
        retries: usize,
        pairs: Vec<(usize, usize)>,
    },

    #[error("ambiguous assignment for link {link}: {candidates} candidate classes")]
    Ambiguous { link: usize, candidates: usize },

    #[error("matching failed for link {link}: {reason}")]
    MatchFailure { link: usize, reason: String },

    #[error("path {path}: {source}")]
    Path {
        path: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Wraps an error with the 1-based id of the path it came from.
    pub fn at_path(self, path: usize) -> Self {
        Error::Path {
            path,
            source: Box::new(self),
        }
    }

    /// True for errors caused by malformed inputs rather than pipeline failures.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Domain(_)
            | Error::InvalidMix(_)
            | Error::InvalidMatrix(_)
            | Error::Dimension(_)
            | Error::EmptySamples
            | Error::Parse(_)
            | Error::Json(_)
            | Error::Csv(_) => true,
            Error::Path { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
