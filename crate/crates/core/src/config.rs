//! Run configuration read from a TOML key-value file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ForestConfig;
use crate::features::{Family, FeatureConfig, StyleMode};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProviderConfig {
    /// Hashed character trigrams.
    Default,
    /// Vectors from a completed request/response file exchange.
    External { requests: PathBuf, responses: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub store_dir: PathBuf,
    pub inputs: Vec<String>,
    pub families: String,
    pub style_fused: bool,
    pub model_path: Option<PathBuf>,
    pub threshold: f64,
    pub seed: u64,
    pub provider: ProviderConfig,
    pub output_dir: PathBuf,
    pub labels: Option<PathBuf>,
    pub holdout_fraction: f64,
    pub workers: usize,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: Option<usize>,
    pub annotation_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let forest = ForestConfig::default();
        Self {
            store_dir: "store".into(),
            inputs: Vec::new(),
            families: "EDT-DSIM-MD-STY".into(),
            style_fused: false,
            model_path: None,
            threshold: 0.5,
            seed: forest.seed,
            provider: ProviderConfig::Default,
            output_dir: "out".into(),
            labels: None,
            holdout_fraction: 0.3,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            n_trees: forest.n_trees,
            max_depth: forest.max_depth,
            min_leaf: forest.min_leaf,
            features_per_split: None,
            annotation_dir: "annotation".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn feature_config(&self) -> Result<FeatureConfig, String> {
        let families = Family::parse_list(&self.families).map_err(|e| e.to_string())?;
        let mut config = FeatureConfig::new(&families);
        if self.style_fused {
            config.style = StyleMode::WithFused;
        }
        Ok(config)
    }

    pub fn forest(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            features_per_split: self.features_per_split,
            seed: self.seed,
        }
    }
}
