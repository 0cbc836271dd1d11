use alloc::boxed::Box;
use alloc::string::String;

/// Errors produced by the testbed kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("configuration error for `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("generation error: {0}")]
    Generation(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("stats error: {0}")]
    Stats(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("no convergence after {iterations} iterations (max deviation {deviation:e})")]
    Convergence { iterations: usize, deviation: f64 },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("comparison error: {0}")]
    Comparison(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The innermost non-stage error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
