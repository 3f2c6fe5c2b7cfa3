use std::fmt;
use std::path::Path;

use zcbm_core::bank::BankError;
use zcbm_core::metrics::MetricsError;
use zcbm_core::pipeline::PipelineError;
use zcbm_core::retrieval::RetrievalError;
use zcbm_core::vecstore::{ProviderError, VecError};

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing or malformed input files. Exit 2.
    Input(String),
    /// The embedding provider failed. Exit 3.
    Provider(String),
    /// Anything else. Exit 4.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Provider(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        CliError::Input(message.into())
    }

    /// Prefixes the message with a path.
    pub fn at(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Input(m) => CliError::Input(format!("{p}: {m}")),
            CliError::Provider(m) => CliError::Provider(m),
            CliError::Internal(m) => CliError::Internal(format!("{p}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Provider(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::InvalidConfig(_) | ProviderError::EmptyInput => CliError::Input(e.to_string()),
            _ => CliError::Provider(e.to_string()),
        }
    }
}

impl From<VecError> for CliError {
    fn from(e: VecError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<BankError> for CliError {
    fn from(e: BankError) -> Self {
        match e {
            BankError::Provider(p) => p.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Provider(p) => p.into(),
            PipelineError::Bank(b) => b.into(),
            PipelineError::Io(io) => CliError::Internal(io.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Pipeline(p) => p.into(),
            MetricsError::Csv(_) | MetricsError::Io(_) => CliError::Internal(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}
