use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed something structurally invalid (bad sizes, infeasible
    /// split, mismatched groups, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input data failed validation (JSON shape, probabilities not summing
    /// to one, duplicate symbols, ...).
    #[error("format error: {0}")]
    Format(String),

    /// A configured budget (enumeration size, atom count, round limit) was
    /// exceeded before the computation finished.
    #[error("resource budget exceeded: {0}")]
    Resource(String),

    /// An exhaustive search completed without finding a witness.
    #[error("search failed: {0}")]
    Search(String),

    /// The saturation loop ran out of budget (walk atoms, trick length, or
    /// round count); carries the partial transcript for inspection.
    #[error("saturation budget exceeded: {message}")]
    SaturationBudget {
        message: String,
        transcript: Box<crate::path::SaturationTranscript>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
