//! Crate-wide error type.

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated an operation's preconditions.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Array or parameter dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A serialized file does not follow its declared format.
    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },

    /// Training produced a non-finite loss or otherwise failed.
    #[error("training failed at step {step}: {message}")]
    Training { step: usize, message: String },

    /// More gradient exposures were requested than the calibrated budget allows.
    #[error("privacy budget violation: exposure {exposures} exceeds the calibrated total of {total_rounds} rounds")]
    BudgetViolation { exposures: usize, total_rounds: usize },

    /// Client reports could not be combined.
    #[error("aggregation error: {0}")]
    Aggregation(String),

    /// A privacy audit could not be carried out.
    #[error("audit error: {0}")]
    Audit(String),

    /// A numeric routine failed (singular matrix, non-convergence).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A regression fit had too little usable data.
    #[error("fit error: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
