//! Command-line front end and HTTP service for `noisemap`.

use std::path::PathBuf;

pub mod commands;
pub mod http;

pub use commands::{load_profile, save_profile, sidecar_path, Cli};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] noisemap::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{0}: {1}")]
    File(PathBuf, std::io::Error),

    #[error("{0}: {1}")]
    Schema(PathBuf, String),

    #[error("{0}")]
    Usage(String),

    #[error("http: {0}")]
    Http(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Io(_) | CliError::File(..) => "io",
            CliError::Schema(..) => "schema",
            CliError::Usage(_) => "usage",
            CliError::Http(_) => "http",
        }
    }

    /// 2 for usage errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// The reader of our output went away (`noisemap ... | head`).
    pub fn is_broken_pipe(&self) -> bool {
        let kind = match self {
            CliError::Io(e) | CliError::Core(noisemap::Error::Io(e)) => Some(e.kind()),
            CliError::Core(noisemap::Error::Json(e)) => e.io_error_kind(),
            CliError::Core(noisemap::Error::Csv(e)) => match e.kind() {
                csv::ErrorKind::Io(e) => Some(e.kind()),
                _ => None,
            },
            _ => None,
        };
        kind == Some(std::io::ErrorKind::BrokenPipe)
    }

    /// `{"error": kind, "message": text}`
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}
