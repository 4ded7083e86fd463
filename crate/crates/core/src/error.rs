use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameter range or consistency violation.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// A linear solve hit a non positive-definite system.
    #[error("singular system: {0}")]
    Singular(String),

    /// NaN or Inf detected mid-run.
    #[error("numeric abort at step {step} (t={t}): {detail}")]
    NumericAbort {
        step: usize,
        t: usize,
        detail: String,
    },

    /// Training loss became non-finite.
    #[error("training diverged at step {step}: loss={loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Numeric failures are distinguished from configuration errors at the
    /// command-line boundary.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericAbort { .. } | Error::Divergence { .. } | Error::Singular(_)
        )
    }
}
