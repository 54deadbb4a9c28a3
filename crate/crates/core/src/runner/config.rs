use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::AlgorithmSpec;
use crate::engine::EngineOptions;
use crate::error::{Error, Result};
use crate::harness::{DataKind, ModelSpec};
use crate::transport::ClusterConfig;

/// A complete, deterministic description of one run, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub epochs: u64,
    /// Directory receiving metrics and summary files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Also write the engine timeline as JSON lines.
    #[serde(default)]
    pub trace: bool,
    pub algorithm: AlgorithmSpec,
    pub model: ModelSpec,
    pub data: DataConfig,
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub compute: ComputeConfig,
    #[serde(default)]
    pub optimizations: EngineOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_samples: usize,
    /// Label flip probability of logistic data.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Rows per step and worker; absent means the whole shard.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Generator seed; defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_noise() -> f64 {
    0.05
}

/// Nominal compute cost, in seconds per parameter per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeConfig {
    #[serde(default = "default_forward")]
    pub forward: f64,
    #[serde(default = "default_backward")]
    pub backward: f64,
}

fn default_forward() -> f64 {
    1e-9
}

fn default_backward() -> f64 {
    2e-9
}

impl Default for ComputeConfig {
    fn default() -> Self {
        Self {
            forward: default_forward(),
            backward: default_backward(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let key = unknown_field(&message).unwrap_or_else(|| "config".to_string());
            Error::config(key, e.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn data_kind(&self) -> DataKind {
        match self.model {
            ModelSpec::Quadratic { .. } => DataKind::Quadratic,
            _ => DataKind::Logistic { noise: self.data.noise },
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        self.algorithm.validate()?;
        self.cluster.validate()?;
        if self.data.n_samples < self.cluster.n_workers {
            return Err(Error::config("data.n_samples", "fewer samples than workers"));
        }
        if self.data.batch_size == Some(0) {
            return Err(Error::config("data.batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.data.noise) {
            return Err(Error::config("data.noise", "must lie in [0, 1]"));
        }
        for (key, v) in [("compute.forward", self.compute.forward), ("compute.backward", self.compute.backward)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be finite and >= 0"));
            }
        }
        if self.optimizations.bucket_capacity == 0 {
            return Err(Error::config("optimizations.bucket_capacity", "must be at least 1 byte"));
        }
        Ok(())
    }
}

/// Pulls the field name out of serde's "unknown field `x`" message.
fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}
