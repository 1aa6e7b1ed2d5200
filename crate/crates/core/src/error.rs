use thiserror::Error;

/// Errors raised anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum BasmuError {
    /// Bad caller input: wrong lengths, out-of-range options, unknown ids.
    #[error("argument error: {0}")]
    Argument(String),

    /// A scalar function was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Kernel matrix failed the positive-semidefinite check.
    #[error("kernel error: {0}")]
    Kernel(String),

    /// Model cannot be fit on the supplied design.
    #[error("fit error: {0}")]
    Fit(String),

    /// A sampler produced a non-finite quantity.
    #[error("sampler error at iteration {iteration}: {message}")]
    Sampler { iteration: usize, message: String },

    /// A factorization failed inside a sampler.
    #[error("numerical error at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    /// Reports with conflicting configurations were merged.
    #[error("merge error: {0}")]
    Merge(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl BasmuError {
    /// True for errors caused by invalid input rather than numerical failure.
    pub fn is_argument(&self) -> bool {
        matches!(
            self,
            BasmuError::Argument(_)
                | BasmuError::Domain(_)
                | BasmuError::Merge(_)
                | BasmuError::Io(_)
                | BasmuError::Csv(_)
                | BasmuError::Json(_)
                | BasmuError::Format(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, BasmuError>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(BasmuError::Argument(msg.into()))
}
