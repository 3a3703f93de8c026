use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid multi-index: {0}")]
    InvalidMultiIndex(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("support violation: {0}")]
    Support(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error(
        "near-singular system (condition estimate {condition:.3e}); \
         0 must not be a Dirichlet eigenvalue of the exterior problem"
    )]
    NearSingular { condition: f64 },

    #[error("iterative solver stalled after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("problem too large for the dense path: {0}")]
    TooLarge(String),

    #[error("coercivity: {0}")]
    Coercivity(String),

    #[error("ill-conditioned normal equations (condition {condition:.3e}); increase lambda_reg or shrink the dictionary")]
    IllConditioned { condition: f64 },

    #[error("dictionary element {index}: {source}")]
    Dictionary {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
