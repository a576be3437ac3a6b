use std::path::Path;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Internal(_) => 3,
        })
    }

    /// Prefixes the message with `context`, keeping the category.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            Self::Usage(m) => Self::Usage(format!("{context}: {m}")),
            Self::Data(m) => Self::Data(format!("{context}: {m}")),
            Self::Internal(m) => Self::Internal(format!("{context}: {m}")),
        }
    }

    pub fn at(path: &Path) -> impl FnOnce(basisn::Error) -> CliError + '_ {
        move |e| CliError::from(e).context(path.display())
    }
}

impl From<basisn::Error> for CliError {
    fn from(e: basisn::Error) -> Self {
        use basisn::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidConfig(_) | E::CoeffBitsOutOfRange(_) | E::CellBitsOutOfRange(_) | E::InvalidDimension(_) => {
                Self::Usage(msg)
            }
            E::ContestViolation { .. } | E::ScheduleMismatch(_) | E::PlaneOutOfRange { .. } | E::InstanceTooLarge { .. } => {
                Self::Internal(msg)
            }
            _ => Self::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Internal(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
