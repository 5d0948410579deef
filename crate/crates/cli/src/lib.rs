//! HTTP API and command-line front end over [`asthmon_core::Platform`].

pub mod api;
pub mod commands;
pub mod config;

use asthmon_core::{PlatformError, StoreError};
use thiserror::Error;

pub use config::ApiConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<PlatformError> for CliError {
    fn from(e: PlatformError) -> Self {
        match e {
            PlatformError::Config(m) => CliError::Config(m),
            PlatformError::Store(StoreError::StorageUnavailable(m)) => CliError::Runtime(format!("storage unavailable: {m}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        PlatformError::from(e).into()
    }
}
