//! Batch command line and HTTP service for the pollination pipeline.

pub mod app;
pub mod config;
pub mod service;
pub mod views;

use std::path::Path;

pub use app::{dispatch, Cli, Command};
pub use config::AppConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) | CliError::Io { .. } => 1,
        }
    }
}

macro_rules! domain_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        }
    )*};
}

domain_from!(
    ppln_core::MissionError,
    ppln_core::orchard::SceneError,
    ppln_core::orchard::ImageError,
    ppln_core::perception::PerceptionError,
    ppln_core::analysis::AnalysisError,
    serde_json::Error
);
