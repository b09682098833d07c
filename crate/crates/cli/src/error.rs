use crate::container::ContainerError;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("schema mismatch in {file}: expected {expected}, found {actual}")]
    Schema { file: String, expected: String, actual: String },
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Schema { .. } | CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::Format { expected, actual } => CliError::Schema { file: "container".into(), expected, actual },
            ContainerError::Io(io) => CliError::Io(io),
            other => CliError::Data(other.to_string()),
        }
    }
}
