//! Run configuration file: `[dataset]`, `[network]`, `[train]`, `[split]`
//! and `[eval]` tables. Every field has a default; dataset paths are
//! relative to the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use siamtcn_core::data::DatasetConfig;
use siamtcn_core::{NetworkConfig, TrainConfig, TrainMode};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub block_channels: Vec<usize>,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub pool_between_blocks: bool,
    pub head_dim: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let d = NetworkConfig::default();
        Self {
            block_channels: d.block_channels,
            kernel: d.kernel,
            dilations: d.dilations,
            pool_between_blocks: d.pool_between_blocks,
            head_dim: d.heads[0].dim,
            bn_momentum: d.bn_momentum,
            bn_eps: d.bn_eps,
        }
    }
}

impl NetworkSection {
    pub fn resolve(&self, input_channels: usize, mode: TrainMode) -> NetworkConfig {
        mode.network_config(
            NetworkConfig {
                input_channels,
                block_channels: self.block_channels.clone(),
                kernel: self.kernel,
                dilations: self.dilations.clone(),
                pool_between_blocks: self.pool_between_blocks,
                heads: Vec::new(),
                bn_momentum: self.bn_momentum,
                bn_eps: self.bn_eps,
            },
            self.head_dim,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Train / validation / test fractions.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            fractions: [0.7, 0.15, 0.15],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub kmeans_seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub split: SplitSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parses a config file; also returns the directory dataset paths are relative to.
    pub fn load(path: &Path) -> CliResult<(Self, PathBuf)> {
        let text = fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let base = fs::canonicalize(dir).map_err(|e| CliError::missing(dir, e))?;
        Ok((cfg, base))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable in TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.lr0, 0.05);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.train.mode = TrainMode::Single(siamtcn_core::Task::Person);
        cfg.train
            .loss
            .weights
            .insert(siamtcn_core::Task::Attribute, 0.5);
        cfg.dataset.paths = vec!["a.csv".into()];
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(toml::from_str::<RunConfig>("[network]\nwidth = 3\n").is_err());
    }
}
