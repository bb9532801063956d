//! Command implementations and the read-only HTTP inference service.

pub mod commands;
pub mod service;

use std::fmt;

use serde::Serialize;

/// Machine-readable failure printed to stderr as `{error, detail}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub error: String,
    pub detail: String,
}

impl CliError {
    pub fn new(error: impl Into<String>, detail: impl Into<String>) -> Self {
        CliError {
            error: error.into(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.error, self.detail)
    }
}

impl std::error::Error for CliError {}

impl From<wimp_core::Error> for CliError {
    fn from(e: wimp_core::Error) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("Io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new("Json", e.to_string())
    }
}
