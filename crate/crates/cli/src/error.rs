use thiserror::Error;

/// Process exit code on success.
pub const EXIT_OK: i32 = 0;
/// Bad configuration, flags or missing inputs.
pub const EXIT_CONFIG: i32 = 2;
/// Inputs that cannot be read or processed. Config values are validated
/// up front, so every error surfacing from the core during a stage counts here.
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: dynregion::Error,
    },
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data { .. } | CliError::Input(_) => EXIT_DATA,
        }
    }
}

/// Attaches context to core errors.
pub trait Context<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for Result<T, dynregion::Error> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Data {
            context: context(),
            source,
        })
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|e| CliError::Data {
            context: context(),
            source: e.into(),
        })
    }
}
