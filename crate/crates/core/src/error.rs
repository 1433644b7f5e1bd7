use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid sizes must be even and at least 8 (got {n1}x{n2})")]
    OddGrid { n1: usize, n2: usize },
    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },
    #[error("inadmissible covariance spec: {0}")]
    Inadmissible(String),
    #[error("lambda must lie in (0,1] (got {0})")]
    Lambda(f64),
    #[error("at least 3 interpolation nodes are required (got {0})")]
    TooFewNodes(usize),
    #[error("a0 outside [{lo}, {hi}] at {count} points (first: index {first}, value {value})")]
    OutOfRange {
        lo: f64,
        hi: f64,
        count: usize,
        first: usize,
        value: f64,
    },
    #[error("ellipticity violated: a(u) = {value} outside [{lo}, {hi}]")]
    Ellipticity { value: f64, lo: f64, hi: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("snapshot format: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
