use mdg_core::MdgError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Core(#[from] MdgError),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("output: {0}")]
    Output(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// What the binary prints on stderr when a command fails.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Core(MdgError::ConfigInvalid(_) | MdgError::InvalidDims(_) | MdgError::InvariantViolation(_)) => {
                "config"
            }
            CliError::Core(_) => "numerical",
            CliError::SchemaMismatch(_) => "schema_mismatch",
            CliError::Output(_) => "output",
        }
    }

    /// 2 for bad configuration or input files, 3 for failures while running,
    /// 4 when result sets disagree on the world they came from.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" | "io" => 2,
            "schema_mismatch" => 4,
            _ => 3,
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() }
    }
}
