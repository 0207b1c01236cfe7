use std::fmt;

use sketchforge::Error;

/// Exit status 1 for problems with the request or its inputs, 2 for everything else.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn internal(e: impl fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::User(m) | CliError::Internal(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let user = matches!(
            e,
            Error::InvalidArgument(_)
                | Error::Topology(_)
                | Error::Parse { .. }
                | Error::SketchRejected(_)
                | Error::Checkpoint(_)
                | Error::Image(_)
        );
        if user {
            CliError::User(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

/// Reads an input file; failures are the caller's fault.
pub fn read_input(path: &std::path::Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))
}

pub fn write_output(path: &std::path::Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))
}
