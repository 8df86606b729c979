use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A value outside its mathematical domain (x outside [0,1], n < k, zero-probability cell).
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent arguments (partition mismatch, bad lengths, preconditions).
    #[error("usage error: {0}")]
    Usage(String),
    /// A configured size guard was exceeded.
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
    /// The optimizer could not produce a finite estimate.
    #[error("estimation failed: {0}")]
    Estimation(String),
    /// An information matrix that must be inverted is singular or ill-conditioned.
    #[error("singular information: {0}")]
    Singular(String),
    /// Every candidate partition failed during selection.
    #[error("selection failed: {0}")]
    Selection(String),
    /// A Monte Carlo experiment exceeded its failure budget.
    #[error("experiment failed: {0}")]
    Experiment(String),
    /// Invalid scenario or run configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed input file.
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code for the CLI. Zero is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Parse(_) | Error::Io(_) | Error::Json(_) | Error::Domain(_) => 3,
            Error::Estimation(_) | Error::Singular(_) | Error::Selection(_) | Error::Experiment(_) => 4,
            Error::SizeLimit(_) => 5,
        }
    }
}
