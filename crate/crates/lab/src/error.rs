use emo_core::EmoError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    /// Invalid configuration; `path` is the dotted field path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("failed to parse config: {0}")]
    Parse(String),
    #[error(transparent)]
    Core(#[from] EmoError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config { path: path.into(), message: message.into() }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        LabError::Io { path: path.display().to_string(), source }
    }

    /// 2 for configuration problems, 3 for numerical divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config { .. } | LabError::Parse(_) | LabError::Core(EmoError::Config(_)) => 2,
            LabError::Core(EmoError::Diverged(_) | EmoError::NonFinite(_)) => 3,
            _ => 1,
        }
    }
}
