//! The TOML experiment file read by every command.
//!
//! ```toml
//! [experiment]
//! name = "california-mae"
//! dataset = "california_housing"
//! loss = "mae"
//! batch_size = 256
//! epochs = 2500
//!
//! [experiment.architecture]
//! output_activation = "softsign"
//! hidden = [{ width = 20, activation = "relu" }, { width = 15, activation = "relu" }]
//! ```
//!
//! Unknown keys anywhere in the file are rejected, naming the offending key.

use std::fmt;
use std::path::Path;

use lalr::bench::ExperimentSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub quantiles: QuantileSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub synthetic: SyntheticSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyChoice {
    #[default]
    Lalr,
    Constant,
}

/// Settings for the single run of `lalr train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default)]
    pub policy: PolicyChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileSection {
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
}

fn default_taus() -> Vec<f64> {
    vec![0.05, 0.5, 0.95]
}

impl Default for QuantileSection {
    fn default() -> Self {
        Self {
            taus: default_taus(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding bundled `<name>.json` manifests.
    #[serde(default = "default_data_dir")]
    pub dir: String,
    /// Target columns when `dataset` points at a bare CSV file; defaults to the last column.
    #[serde(default)]
    pub targets: Vec<String>,
}

fn default_data_dir() -> String {
    "datasets".into()
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: default_data_dir(),
            targets: Vec::new(),
        }
    }
}

/// Sizes of the generated data when `dataset = "synthetic"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    #[serde(default = "default_synth_rows")]
    pub train: usize,
    #[serde(default = "default_synth_rows")]
    pub test: usize,
    #[serde(default = "default_synth_seed")]
    pub seed: u64,
}

fn default_synth_rows() -> usize {
    10_000
}

fn default_synth_seed() -> u64 {
    1
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            train: default_synth_rows(),
            test: default_synth_rows(),
            seed: default_synth_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// Dotted key path, empty when the error is not tied to a key.
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "at `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError {
            path: String::new(),
            message: e.message().to_string(),
        })?;
        let cfg: CliConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError {
            path: e.path().to_string(),
            message: first_line(&e.inner().message().to_string()),
        })?;
        cfg.experiment.validate().map_err(|e| ConfigError {
            path: "experiment".into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: String::new(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or_default().trim().to_string()
}
