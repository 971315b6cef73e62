use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    /// Malformed config; `message` carries the line and the offending field.
    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error("config asks for `{found}` but the `{expected}` subcommand was used")]
    ExperimentMismatch { expected: String, found: String },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error(transparent)]
    Core(#[from] martspline::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
