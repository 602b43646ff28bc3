use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("matrix not positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix indefinite beyond tolerance (min eig {min_eig:e}, max eig {max_eig:e})")]
    Indefinite { min_eig: f64, max_eig: f64 },

    #[error("UE {ue} coincides with subarray {subarray}")]
    Coincident { ue: usize, subarray: usize },

    #[error("pilot configuration: {0}")]
    Pilot(String),

    #[error("allocation: {0}")]
    Allocation(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit code for the CLI: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}
