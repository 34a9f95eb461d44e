use std::fmt;
use std::path::Path;

use dsan::checkpoint::CheckpointError;
use dsan::data::DataError;
use dsan::introspect::IntrospectError;
use dsan::train::TrainError;
use dsan::TensorError;

/// Failure of a subcommand, classified by the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing arguments; the message is printed with usage text.
    Usage(String),
    /// Unreadable, unwritable or malformed input and output files.
    Data(String),
    /// A NaN or infinity stopped the computation.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<IntrospectError> for CliError {
    fn from(e: IntrospectError) -> Self {
        match e {
            IntrospectError::Tensor(t) => t.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
