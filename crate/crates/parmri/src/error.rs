use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("solver diverged: {0}")]
    Divergence(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("container format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("autodiff usage error: {0}")]
    Autodiff(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable code, used by the CLI error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Parameter(_) => "parameter",
            Error::Calibration(_) => "calibration",
            Error::DegenerateFit(_) => "degenerate_fit",
            Error::Divergence(_) => "divergence",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Scenario(_) => "scenario",
            Error::Autodiff(_) => "autodiff",
            Error::Training(_) => "training",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
