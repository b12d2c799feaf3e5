use std::path::Path;

use anyhow::{bail, Context, Result};
use regionsep::dataset::DatasetConfig;
use regionsep::objectives::Regime;
use regionsep::separator::ModelConfig;
use regionsep::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Contents of the `--config` file. Each section is optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// Separator size; a small preset sized to the data when absent.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
}

fn default_train() -> TrainConfig {
    TrainConfig::new(10, Regime::Fixed)
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig::default(),
            model: None,
            train: default_train(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(regionsep::Error::from)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.dataset.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// `--seed` replaces every seed in the file.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.dataset.seed = s;
            self.train.seed = s;
        }
    }

    /// Model sized for `dataset`: the configured one, checked, or the desk preset.
    pub fn model_for(&self, dataset: &DatasetConfig) -> Result<ModelConfig> {
        let (m, r) = (dataset.array.len(), dataset.regions.len());
        let cfg = match &self.model {
            Some(c) => c.clone(),
            None => ModelConfig {
                num_mics: m,
                num_regions: r,
                reference_mic: Some(dataset.array.reference_index),
                ..ModelConfig::desk()
            },
        };
        if cfg.num_mics != m || cfg.num_regions != r {
            bail!(regionsep::Error::Config(format!(
                "model expects {} mics and {} regions, data has {m} and {r}",
                cfg.num_mics, cfg.num_regions
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
