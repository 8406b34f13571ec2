use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{artifact} missing; run {command}")]
    MissingPrerequisite { artifact: String, command: &'static str },

    #[error("artifacts come from different configs: {0}")]
    MixedArtifacts(String),

    #[error(transparent)]
    Core(#[from] unicon::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(path: impl Into<String>, message: impl ToString) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::MixedArtifacts(_) => EXIT_CONFIG,
            CliError::MissingPrerequisite { .. } => EXIT_MISSING,
            CliError::Core(e) => match e {
                unicon::Error::Config(_) => EXIT_CONFIG,
                unicon::Error::Divergence(_) | unicon::Error::Numeric(_) => EXIT_NUMERIC,
                _ => EXIT_FAILURE,
            },
        }
    }
}
