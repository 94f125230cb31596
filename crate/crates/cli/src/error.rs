use std::fmt;

use serde_json::json;

/// CLI failure classes and their exit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Invalid configuration document or flag value.
    Schema(String),
    /// The library rejected the computation.
    Numerical(mwlattice::Error),
    /// Reading inputs or writing artifacts failed.
    Io(String),
    /// The run finished but flagged its result as invalid.
    Invalid(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numerical(mwlattice::Error::Config(_)) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
            CliError::Invalid(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Schema(_) | CliError::Numerical(mwlattice::Error::Config(_)) => "schema",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
            CliError::Invalid(_) => "invalid_result",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Invalid(m) => write!(f, "invalid result: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mwlattice::Error> for CliError {
    fn from(e: mwlattice::Error) -> Self {
        CliError::Numerical(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
