use std::fmt;

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or missing inputs: exit code 2.
    Usage(String),
    /// Anything that fails while running: exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<shapeflow_core::Error> for CliError {
    fn from(e: shapeflow_core::Error) -> Self {
        match e {
            shapeflow_core::Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<shapeflow_surrogate::Error> for CliError {
    fn from(e: shapeflow_surrogate::Error) -> Self {
        match e {
            shapeflow_surrogate::Error::Config(_) => CliError::Usage(e.to_string()),
            shapeflow_surrogate::Error::Core(inner) => inner.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub fn io_err(context: impl fmt::Display, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}
