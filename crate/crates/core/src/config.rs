//! The JSON run configuration shared by every command.
//!
//! Every section and field is optional and falls back to its default. Unknown keys are rejected
//! so a misspelled κ, β or α name cannot silently change an experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DataGenConfig;
use crate::error::{Error, Result};
use crate::eval::PoolSelection;
use crate::io::read_file;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub pools: Vec<usize>,
    pub pool_selection: PoolSelection,
    pub alphas: Vec<f64>,
    /// Number of k-means clusters used to order heatmaps.
    pub heatmap_clusters: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            pools: vec![100],
            pool_selection: PoolSelection::First,
            alphas: vec![0.3, 0.4, 0.5, 0.6],
            heatmap_clusters: 8,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.pools.is_empty() || self.pools.contains(&0) {
            return Err(Error::invalid("eval.pools", "needs at least one positive pool size"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::invalid("eval.alphas", format!("{a} is outside [0, 1]")));
        }
        if self.heatmap_clusters == 0 {
            return Err(Error::invalid("eval.heatmap_clusters", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataGenConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::invalid("config", "file is not UTF-8"))?;
        Self::from_json(&text)
    }
}
