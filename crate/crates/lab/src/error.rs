use std::path::Path;

use tee_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config error for `{key}`{}: {reason}", line_suffix(*.line))]
    Config {
        key: String,
        line: Option<usize>,
        reason: String,
    },
    #[error("{path}:{line}: {reason}")]
    Format { path: String, line: usize, reason: String },
    #[error("{path}: field `{field}`: {reason}")]
    Schema { path: String, field: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("run at {path} is incomplete; missing stages: {}", missing.join(", "))]
    Incomplete { path: String, missing: Vec<String> },
    #[error("replay mismatch: {0}")]
    Replay(String),
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" (line {l})")).unwrap_or_default()
}

pub type LabResult<T> = Result<T, LabError>;

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn schema(path: &str, field: impl Into<String>, reason: impl Into<String>) -> Self {
        LabError::Schema {
            path: path.to_string(),
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// 1 for configuration and validation problems, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Config { .. } => 1,
            LabError::Core(e) if matches!(e.root(), CoreError::Config { .. }) => 1,
            _ => 2,
        }
    }
}
