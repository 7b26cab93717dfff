use std::path::PathBuf;

use thiserror::Error;

/// A configuration problem, located by line and/or key where known.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default(), key.as_ref().map(|k| format!("`{k}`: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self { line: None, key: None, message: message.into() }
    }

    pub fn at_key(key: &str, message: impl Into<String>) -> Self {
        Self { line: None, key: Some(key.to_string()), message: message.into() }
    }

    pub fn at_line(line: usize, key: Option<&str>, message: impl Into<String>) -> Self {
        Self { line: Some(line), key: key.map(str::to_string), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("missing upstream artifact from stage `{stage}` (expected {})", path.display())]
    Dependency { stage: &'static str, path: PathBuf },
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: cdm_core::Error,
    },
    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ForgeError {
    /// Process exit code: 2 config, 3 dependency, 4 numeric, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ForgeError::Config(_) => 2,
            ForgeError::Dependency { .. } => 3,
            ForgeError::Stage { source, .. } => match source {
                cdm_core::Error::NonFinite { .. } => 4,
                cdm_core::Error::Config(_) => 2,
                _ => 1,
            },
            _ => 1,
        }
    }

    pub fn format(what: &'static str, message: impl Into<String>) -> Self {
        ForgeError::Format { what, message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ForgeError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = ForgeError> = std::result::Result<T, E>;

/// Attaches a stage name to core errors.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for cdm_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| ForgeError::Stage { stage, source })
    }
}
