use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The Gram data does not describe a positive-definite even symmetric matrix.
    #[error("invalid form: {0}")]
    InvalidForm(String),

    /// A lattice-point enumeration exceeded its configured point budget.
    #[error("enumeration budget exhausted: {0}")]
    ResourceLimit(String),

    /// A target-set specification could not be parsed or is empty.
    #[error("target set: {0}")]
    Target(String),

    /// A ternary catalog file could not be parsed or failed validation.
    #[error("catalog: {0}")]
    Catalog(String),

    /// A checkpoint file is missing, corrupt, or inconsistent with the run.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// A numeric routine was invoked outside its domain of validity.
    #[error("domain: {0}")]
    Domain(String),

    /// An independent recheck of a claimed certificate or verdict failed.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
