use windflow_core::Error as CoreError;
use windflow_serve::ServeError;

/// Exit code 1 for problems the caller can fix, 2 for everything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::User(_) => 1,
            Self::Internal(_) => 2,
        }
    }

    pub fn user(msg: impl Into<String>) -> Self {
        Self::User(msg.into())
    }

    /// Prefix the message with the file it concerns.
    pub fn at(path: &std::path::Path) -> impl FnOnce(Self) -> Self + '_ {
        move |e| match e {
            Self::User(m) => Self::User(format!("{}: {m}", path.display())),
            Self::Internal(m) => Self::Internal(format!("{}: {m}", path.display())),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Diverged { .. }
            | CoreError::DegenerateWeight
            | CoreError::NonFiniteLoss { .. }
            | CoreError::Tensor(_) => Self::Internal(e.to_string()),
            other => Self::User(other.to_string()),
        }
    }
}

impl From<ServeError> for CliError {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::Config(_) | ServeError::Io(_) => Self::User(e.to_string()),
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::User(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::User(format!("invalid JSON: {e}"))
    }
}
