use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),

    #[error("cannot parse configuration: {0}")]
    Parse(String),

    #[error(transparent)]
    Core(#[from] opwalk_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {msg}", path.display())]
    Malformed { path: PathBuf, msg: String },

    #[error("{0}")]
    Conflict(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    pub fn malformed(path: &Path, msg: impl Into<String>) -> Self {
        HarnessError::Malformed { path: path.to_path_buf(), msg: msg.into() }
    }

    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Invalid(_) | HarnessError::Parse(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
