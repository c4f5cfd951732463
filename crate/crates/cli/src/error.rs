use ilp_core::IlpError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure in {context}: {source}")]
    Numeric {
        context: String,
        #[source]
        source: IlpError,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric { .. } | CliError::Io { .. } => 3,
            CliError::Validation(_) => 4,
        }
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for Result<T, IlpError> {
    fn context(self, what: &str) -> Result<T, CliError> {
        self.map_err(|source| match source {
            IlpError::InvalidArgument(msg) => CliError::Config(format!("{what}: {msg}")),
            source => CliError::Numeric {
                context: what.to_string(),
                source,
            },
        })
    }
}
