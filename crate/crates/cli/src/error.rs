//! Failure classes and their exit codes.

use std::io;

use ccseg_core::features::FeatureError;
use ccseg_core::fetch::FetchError;
use ccseg_core::lastmod::LastModError;
use ccseg_core::stats::StatsError;
use ccseg_core::synth::SynthError;
use ccseg_core::zipnum::{AccessError, ZipNumError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{0}")]
    Usage(String),
    #[error("network: {0}")]
    Network(String),
    #[error("data integrity: {0}")]
    Integrity(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotFound(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Network(_) => 3,
            CliError::Integrity(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Usage(format!("I/O: {e}"))
    }
}

impl From<FetchError> for CliError {
    fn from(e: FetchError) -> Self {
        match e {
            FetchError::ChecksumMismatch { .. } => CliError::Integrity(e.to_string()),
            FetchError::InvalidArchiveId(_) | FetchError::EmptyRange => CliError::Usage(e.to_string()),
            FetchError::Io(io) => io.into(),
            e => CliError::Network(e.to_string()),
        }
    }
}

impl From<ZipNumError> for CliError {
    fn from(e: ZipNumError) -> Self {
        match &e {
            _ if e.is_network() => CliError::Network(e.to_string()),
            ZipNumError::RangeUnavailable { source: AccessError::Io(_), .. } | ZipNumError::Io(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Integrity(e.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<LastModError> for CliError {
    fn from(e: LastModError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Integrity(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(format!("JSON: {e}"))
    }
}
