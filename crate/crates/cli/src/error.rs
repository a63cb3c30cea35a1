//! Error classification for process exit codes: 2 usage, 3 data,
//! 4 numerical failure.

use tweedie_core::Error as CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 2,
    Data = 3,
    Numerical = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Data, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Numerical, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let kind = match &e {
            CoreError::InvalidParameter(_) | CoreError::Unsupported(_) => ExitKind::Usage,
            CoreError::ShapeMismatch(_)
            | CoreError::InvalidShape(_)
            | CoreError::SupportViolation(_)
            | CoreError::Format(_)
            | CoreError::Io(_) => ExitKind::Data,
            CoreError::GammaSingular { .. }
            | CoreError::NonFinite { .. }
            | CoreError::EstimationFailed(_) => ExitKind::Numerical,
        };
        CliError { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(format!("i/o error: {e}"))
    }
}
