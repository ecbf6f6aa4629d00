use thiserror::Error;

/// Errors raised by model construction, oracles, training and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Param(String),

    #[error("load error in `{field}`: {message}")]
    Load { field: String, message: String },

    #[error("size error: {what} requires {required} entries, cap is {cap}")]
    Size {
        what: &'static str,
        required: u128,
        cap: u128,
    },

    #[error("contract error: {0}")]
    Contract(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("non-finite value at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn load(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Load {
            field: field.into(),
            message: message.into(),
        }
    }
}
