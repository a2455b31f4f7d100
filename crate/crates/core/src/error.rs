use thiserror::Error;

/// Crate-wide error type. The CLI maps `Config` and `Io` onto exit code 2;
/// everything else surfaces as a run failure.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad parameter ranges, malformed files,
    /// incompatible variants.
    #[error("configuration error: {0}")]
    Config(String),

    /// Structurally valid input that the operation cannot accept
    /// (dimension mismatch, degenerate data).
    #[error("input error: {0}")]
    Input(String),

    /// Numerical failure: non-convergence, non-finite intermediate values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
