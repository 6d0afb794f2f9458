use std::fmt;
use std::path::Path;

use serde::Serialize;
use steamkit::model::{ModelError, Violation};

/// Process exit codes.
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Input,
    Infeasible,
    Internal,
}

#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Input, message: message.into(), path: None, violations: Vec::new() }
    }

    pub fn internal(message: impl fmt::Display) -> Self {
        CliError { kind: Kind::Internal, message: message.to_string(), path: None, violations: Vec::new() }
    }

    pub fn infeasible(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Infeasible, message: message.into(), path: None, violations: Vec::new() }
    }

    pub fn invalid(violations: Vec<Violation>) -> Self {
        CliError { violations, ..CliError::input("instance failed validation") }
    }

    pub fn model(file: &Path, err: ModelError) -> Self {
        let message = format!("{}: {err}", file.display());
        match err {
            ModelError::Schema { path, .. } if !path.is_empty() => CliError { path: Some(path), ..CliError::input(message) },
            _ => CliError::input(message),
        }
    }

    pub fn io(file: &Path, err: std::io::Error) -> Self {
        CliError::input(format!("{}: {err}", file.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Input => EXIT_INPUT,
            Kind::Infeasible => EXIT_INFEASIBLE,
            Kind::Internal => EXIT_INTERNAL,
        }
    }

    /// `{"error": {...}}` on a single line.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: &'a CliError,
        }
        serde_json::to_string(&Wrapper { error: self }).expect("error documents always serialize")
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::internal(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::internal(e)
    }
}
