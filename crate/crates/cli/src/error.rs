use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or inputs; message starts with the field path.
    #[error("config error: {0}")]
    Config(String),

    /// Failure while running an otherwise valid experiment.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(path: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{path}: {msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    /// Classifies a library error raised while interpreting `path`.
    pub fn from_core(path: &str, e: disco_core::Error) -> Self {
        use disco_core::Error as E;
        match e {
            E::Config(_)
            | E::InvalidSchedule(_)
            | E::InvalidHorizon(_)
            | E::InvalidKeyframe(_)
            | E::InvalidModel(_)
            | E::NoRule { .. }
            | E::UnsupportedFrameKind { .. }
            | E::Checkpoint(_)
            | E::Json(_) => CliError::config(path, e),
            other => CliError::Runtime(format!("{path}: {other}")),
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

pub type CliResult<T> = Result<T, CliError>;
