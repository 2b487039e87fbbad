use std::path::{Path, PathBuf};

use serde::Serialize;
use tongue_ema::Error;

/// Exit code for malformed input files and bad command lines.
pub const EXIT_MALFORMED: i32 = 2;
/// Exit code for every other failure.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: "usage",
            message: message.into(),
            path: None,
            line: None,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: "config",
            message: message.into(),
            path: None,
            line: None,
        }
    }

    pub fn at(mut self, path: &Path) -> Self {
        if self.path.is_none() {
            self.path = Some(path.to_path_buf());
        }
        self
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "parse" | "json" | "usage" | "config" => EXIT_MALFORMED,
            _ => EXIT_FAILURE,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (line, path) = match &e {
            Error::Parse { line, .. } => (Some(*line).filter(|l| *l > 0), None),
            Error::Io { path, .. } => (None, Some(path.clone())),
            Error::Json(j) => (Some(j.line()).filter(|l| *l > 0), None),
            _ => (None, None),
        };
        let kind = e.kind();
        CliError {
            kind,
            message: e.to_string(),
            path,
            line,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attach the file a failure came from.
pub trait Context<T> {
    fn in_file(self, path: &Path) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn in_file(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| e.into().at(path))
    }
}
