use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FcmError {
    /// Invalid run configuration. `line` is 1-based when the error came from parsing text.
    #[error("configuration error{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    /// Internal consistency failure, e.g. a truncated block that cannot be completed.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// A DOF with no block coverage and a zero diagonal entry in A.
    #[error("uncovered DOF {dof} has zero diagonal entry A({dof},{dof}); fully fictitious function left in the system")]
    ZeroDiagonal { dof: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{scenario}: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<FcmError>,
    },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FcmError {
    pub fn config(message: impl Into<String>) -> Self {
        FcmError::Config { line: None, message: message.into() }
    }

    pub fn config_at(line: usize, message: impl Into<String>) -> Self {
        FcmError::Config { line: Some(line), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FcmError::Io { path: path.into(), source }
    }

    pub fn in_scenario(self, scenario: impl Into<String>) -> Self {
        FcmError::Scenario { scenario: scenario.into(), source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, FcmError>;
