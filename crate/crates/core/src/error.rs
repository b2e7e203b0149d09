use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid task graph: {0}")]
    Graph(String),
    #[error("no eligible task for resource {0}")]
    NoEligibleTask(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("expectation propagation failed: {0}")]
    Ep(String),
}
