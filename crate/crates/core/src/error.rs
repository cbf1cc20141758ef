use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("drift model not defined for the random-walk family")]
    RandomWalkHasNoDrift,

    #[error("ill-conditioned linear system (condition estimate {condition:.3e} > {threshold:.1e})")]
    IllConditioned { condition: f64, threshold: f64 },

    #[error("non-finite basis evaluation at interval {interval}, step {step}")]
    BasisOverflow { interval: usize, step: usize },

    #[error("importance weights underflowed for interval {interval} ({draws} draws)")]
    WeightUnderflow { interval: usize, draws: usize },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("singular hessian: {0}")]
    SingularHessian(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("schema version mismatch: file has {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("malformed results file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
