use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A target geometry could not be realised (support does not fit the cube).
    #[error("construction error: {0}")]
    Construction(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("corrupted model: {0}")]
    CorruptedModel(String),

    /// Training produced a non-finite loss.
    #[error("training diverged on interval {interval} at step {step}: {diagnostic}")]
    Divergence {
        interval: usize,
        step: usize,
        diagnostic: String,
    },

    /// A non-finite quantity appeared during numerical integration.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Construction(_) | Error::Unsupported(_) => 2,
            Error::Divergence { .. } | Error::Numerical(_) | Error::CorruptedModel(_) => 3,
            Error::Io(_) | Error::Serde(_) => 4,
        }
    }
}
