//! Files in and out: scenario configs, feature CSVs, checkpoints and the
//! metrics stream.

mod checkpoint;
mod csv_data;
mod metrics;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gan::GanError;
use crate::mlp::MlpError;
use crate::sim::{ConfigViolation, SimConfig};

pub use checkpoint::{
    config_digest, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
};
pub use csv_data::{load_feature_csv, write_feature_csv, FeatureDataset};
pub use metrics::{read_metrics, write_metrics, MetricsWriter};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: syntax error: {0}")]
    ConfigSyntax(String),
    #[error("config: `{key}`: {message}")]
    ConfigKey { key: String, message: String },
    #[error("{path}: line {line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(
        "checkpoint {path}: {network} spec hash {found:016x} does not match expected {expected:016x}"
    )]
    SpecMismatch {
        path: PathBuf,
        network: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("metrics: {0}")]
    Metrics(String),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

impl IoError {
    pub(crate) fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.to_owned(),
            source,
        }
    }

    /// Configuration problems, as opposed to runtime I/O failures.
    pub fn is_config_error(&self) -> bool {
        matches!(self, IoError::ConfigSyntax(_) | IoError::ConfigKey { .. })
    }
}

impl From<ConfigViolation> for IoError {
    fn from(v: ConfigViolation) -> Self {
        IoError::ConfigKey {
            key: v.key,
            message: v.message,
        }
    }
}

/// Parses and validates a TOML scenario; unknown keys are errors.
pub fn parse_config_str(text: &str) -> Result<SimConfig, IoError> {
    let de = toml::Deserializer::parse(text).map_err(|e| IoError::ConfigSyntax(e.to_string()))?;
    let config: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let message = e.into_inner().message().to_owned();
        IoError::ConfigKey { key, message }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<SimConfig, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    parse_config_str(&text)
}

/// Renders a config as TOML that [`parse_config_str`] reads back unchanged.
pub fn serialize_config(config: &SimConfig) -> String {
    toml::to_string(config).expect("config is always representable as TOML")
}
