//! Error type shared by every module.

use thiserror::Error;

/// Failures reported by the library. Validation failures (bad input) and
/// numeric failures (a solver did not converge) are kept apart so the runner
/// can map them to different exit codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("point outside the domain: {0}")]
    Domain(String),
    #[error("ambiguous side: {0}")]
    Ambiguous(String),
    #[error("geometry error: {message} (hint: {hint})")]
    Geometry { message: String, hint: String },
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("numeric error: {message} (residual {residual:.3e})")]
    Numeric { message: String, residual: f64 },
    #[error("region error: {0}")]
    Region(String),
    #[error("rescaling error: {0}")]
    Rescaling(String),
    /// A control solve stopped short; `best` is the best iterate found.
    #[error("partial result: {message}")]
    Partial { message: String, best: Box<crate::control::ControlResult> },
}

impl Error {
    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Domain(_) => "domain",
            Error::Ambiguous(_) => "ambiguous",
            Error::Geometry { .. } => "geometry",
            Error::Configuration(_) => "configuration",
            Error::Numeric { .. } => "numeric",
            Error::Region(_) => "region",
            Error::Rescaling(_) => "rescaling",
            Error::Partial { .. } => "partial",
        }
    }

    /// True for failures of a numerical procedure rather than of the input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. } | Error::Partial { .. })
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, residual: f64) -> Self {
        Error::Numeric { message: msg.into(), residual }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
