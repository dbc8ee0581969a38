use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// A config field failed validation.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("could not parse config: {0}")]
    Parse(String),

    #[error(transparent)]
    Core(#[from] ddlab_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid DDLAB_THREADS value `{0}`")]
    Threads(String),

    #[error("selftest failed: {0}")]
    SelftestFailed(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Parse(_) => "parse",
            CliError::Core(ddlab_core::Error::Domain(_)) => "domain",
            CliError::Core(ddlab_core::Error::DimensionMismatch { .. }) => "dimension",
            CliError::Core(ddlab_core::Error::SingularMode { .. }) => "singular-mode",
            CliError::Core(ddlab_core::Error::Integration { .. }) => "integration",
            CliError::Core(ddlab_core::Error::Unsupported(_)) => "unsupported",
            CliError::Io { .. } => "io",
            CliError::Csv(_) => "csv",
            CliError::Json(_) => "json",
            CliError::Threads(_) => "threads",
            CliError::SelftestFailed(_) => "selftest",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
        });
        if let CliError::Config { field, .. } = self {
            obj["field"] = serde_json::Value::String(field.clone());
        }
        obj
    }
}
