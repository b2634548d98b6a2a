use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("state space too large: {states} states exceeds the limit of {limit}")]
    TooLarge { states: u128, limit: u128 },
    #[error("weight collapse: {0}")]
    WeightCollapse(String),
    #[error("{dropped} of {total} trajectories dropped (limit 1%)")]
    TooManyDropped { dropped: usize, total: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
