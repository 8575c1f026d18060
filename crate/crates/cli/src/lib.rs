//! Library side of the `fsde-lab` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

pub use config::{parse_config, ConfigError, RunConfig, SCHEMA_VERSION};

use fsde_core::FsdeError;

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const STATISTICAL_FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const ACCURACY: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] FsdeError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_accuracy() => exit::ACCURACY,
            CliError::Core(FsdeError::Ensemble { first, .. }) if first.is_accuracy() => exit::ACCURACY,
            _ => exit::USAGE,
        }
    }
}
