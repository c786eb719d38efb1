use std::path::PathBuf;

use scatsr_core::Error as CoreError;

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const DIVERGED: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: content hash changed (expected {expected}, found {actual})")]
    Drift { path: PathBuf, expected: String, actual: String },
    #[error("checkpoint fingerprint {checkpoint} does not match configured feature network {config}")]
    Fingerprint { checkpoint: String, config: String },
    #[error("{0}")]
    Diverged(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short class name used in diagnostic lines.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) | CliError::Fingerprint { .. } => "config",
            CliError::Io { .. } | CliError::Format { .. } | CliError::Drift { .. } => "io",
            CliError::Diverged(_) => "diverged",
            CliError::Core(e) => match e {
                CoreError::NonFinite(_) | CoreError::Diverged { .. } => "diverged",
                _ => "config",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "io" => exit::IO,
            "diverged" => exit::DIVERGED,
            _ => exit::CONFIG,
        }
    }

    /// `error kind=<kind> code=<code>: <message>` on one line.
    pub fn diagnostic_line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error kind={} code={}: {msg}", self.kind(), self.exit_code())
    }
}

pub type CliResult<T> = Result<T, CliError>;
