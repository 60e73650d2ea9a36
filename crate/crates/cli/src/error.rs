use std::fmt;

/// A categorized failure; the category decides the exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation.
    Usage(String),
    /// Invalid configuration, with the path of the offending field.
    Config { field: String, message: String },
    /// A check ran and failed (e.g. gradient check above tolerance).
    Failed(String),
    Runtime(rrnn_core::Error),
    Io(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config { field: field.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Config { .. } => 3,
            Self::Failed(_) | Self::Runtime(_) | Self::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Config { field, message } => write!(f, "configuration error at `{field}`: {message}"),
            Self::Failed(m) => write!(f, "check failed: {m}"),
            Self::Runtime(e) => write!(f, "{e}"),
            Self::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<rrnn_core::Error> for CliError {
    fn from(e: rrnn_core::Error) -> Self {
        match e {
            rrnn_core::Error::Config { field, message } => Self::Config { field, message },
            other => Self::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
