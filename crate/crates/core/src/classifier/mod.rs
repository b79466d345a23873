//! Baseline rule, random forest, evaluation metrics and model files.

mod cv;
mod metrics;
mod tree;

pub use cv::{
    cross_validate, grid_search, stratified_folds, CvResult, GridSearchResult, ParamGrid,
    SelectionMetric,
};
pub use metrics::{auc, evaluate, ConfusionCounts, EvalReport};
pub use tree::{DecisionTree, Node};

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;
use tree::{CompiledTree, TreeBuilder, TreeParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Thresholds of the depth-two edit-distance rule.
pub const BASELINE_NAME_THRESHOLD: f64 = 0.721;
pub const BASELINE_DESCRIPTION_THRESHOLD: f64 = 0.742;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("missing feature {0}")]
    MissingFeature(String),
    #[error("feature order mismatch: {0}")]
    FeatureMismatch(String),
    #[error("training needs at least 2 examples of each class (got {positives} positive, {negatives} negative)")]
    InsufficientClasses { positives: usize, negatives: usize },
    #[error("AUC is undefined when only one class is present")]
    AucUndefined,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model file format version {found} is newer than supported version {MODEL_FORMAT_VERSION}")]
    Version { found: u64 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("model i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BaselineTree,
    RandomForest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Defaults to `ceil(sqrt(#features))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 2,
            features_per_split: None,
            seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn features_per_split_for(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }
}

/// A trained (or hand-built) tree ensemble; its score is the mean leaf score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub kind: ModelKind,
    pub feature_order: Vec<String>,
    pub trees: Vec<DecisionTree>,
    pub training_config: Option<ForestConfig>,
    /// Left empty by training so identical inputs give identical files.
    #[serde(default)]
    pub created_at: Option<i64>,
}

/// A model with feature names resolved to column indices.
pub struct CompiledModel {
    feature_order: Vec<String>,
    trees: Vec<CompiledTree>,
}

impl CompiledModel {
    pub fn score_row(&self, row: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.score(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn score(&self, fv: &FeatureVector) -> Result<f64, ModelError> {
        let row = fv
            .project(&self.feature_order)
            .map_err(|missing| ModelError::FeatureMismatch(format!("{}: no feature {missing}", fv.event_ref)))?;
        Ok(self.score_row(&row))
    }
}

impl ModelArtifact {
    /// The depth-two rule as a one-tree model: positive iff
    /// `nld_name > 0.721` and `nld_description > 0.742`.
    pub fn baseline() -> Self {
        let tree = DecisionTree {
            nodes: vec![
                Node::Split {
                    feature: "nld_name".into(),
                    threshold: BASELINE_NAME_THRESHOLD,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { score: 0.0 },
                Node::Split {
                    feature: "nld_description".into(),
                    threshold: BASELINE_DESCRIPTION_THRESHOLD,
                    left: 3,
                    right: 4,
                },
                Node::Leaf { score: 0.0 },
                Node::Leaf { score: 1.0 },
            ],
        };
        Self {
            format_version: MODEL_FORMAT_VERSION,
            kind: ModelKind::BaselineTree,
            feature_order: vec!["nld_name".into(), "nld_description".into()],
            trees: vec![tree],
            training_config: None,
            created_at: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.trees.is_empty() {
            return Err(ModelError::Corrupt("model has no trees".into()));
        }
        for (i, t) in self.trees.iter().enumerate() {
            t.validate(&self.feature_order)
                .map_err(|e| ModelError::Corrupt(format!("tree {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn compile(&self) -> CompiledModel {
        CompiledModel {
            feature_order: self.feature_order.clone(),
            trees: self
                .trees
                .iter()
                .map(|t| t.compile(&self.feature_order))
                .collect(),
        }
    }

    /// Canonical single-line JSON encoding.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| ModelError::Corrupt("missing format_version".into()))?;
        if version > u64::from(MODEL_FORMAT_VERSION) {
            return Err(ModelError::Version { found: version });
        }
        let model: ModelArtifact =
            serde_json::from_value(value).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }
}

pub fn save_model(model: &ModelArtifact, path: &Path) -> Result<(), ModelError> {
    let mut text = model.to_json();
    text.push('\n');
    fs::write(path, text).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<ModelArtifact, ModelError> {
    let text =
        fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    ModelArtifact::from_json(&text)
}

/// The depth-two rule with strict inequalities at both thresholds.
pub fn baseline_classify(fv: &FeatureVector) -> Result<bool, ModelError> {
    let name = fv
        .get("nld_name")
        .ok_or_else(|| ModelError::MissingFeature("nld_name".into()))?;
    let desc = fv
        .get("nld_description")
        .ok_or_else(|| ModelError::MissingFeature("nld_description".into()))?;
    Ok(name > BASELINE_NAME_THRESHOLD && desc > BASELINE_DESCRIPTION_THRESHOLD)
}

pub fn predict(model: &ModelArtifact, fv: &FeatureVector) -> Result<f64, ModelError> {
    model.compile().score(fv)
}

pub fn predict_label(model: &ModelArtifact, fv: &FeatureVector, threshold: f64) -> Result<bool, ModelError> {
    Ok(predict(model, fv)? >= threshold)
}

pub fn predict_batch(model: &ModelArtifact, fvs: &[FeatureVector]) -> Result<Vec<f64>, ModelError> {
    let compiled = model.compile();
    fvs.iter().map(|fv| compiled.score(fv)).collect()
}

/// Per-tree seed derived from the master seed and the tree index.
fn tree_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dense training matrix with a fixed feature order.
pub struct TrainingSet {
    pub feature_order: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl TrainingSet {
    pub fn from_examples(examples: &[(FeatureVector, bool)]) -> Result<Self, ModelError> {
        let first = examples
            .first()
            .ok_or_else(|| ModelError::InvalidInput("no training examples".into()))?;
        let feature_order: Vec<String> = first.0.names().map(str::to_string).collect();
        if feature_order.is_empty() {
            return Err(ModelError::InvalidInput("feature vectors are empty".into()));
        }
        let mut rows = Vec::with_capacity(examples.len());
        for (fv, _) in examples {
            if !fv.names().eq(feature_order.iter().map(String::as_str)) {
                return Err(ModelError::FeatureMismatch(format!(
                    "{} does not share the feature order of {}",
                    fv.event_ref, first.0.event_ref
                )));
            }
            rows.push(fv.values.values().copied().collect());
        }
        Ok(Self {
            feature_order,
            rows,
            labels: examples.iter().map(|(_, y)| *y).collect(),
        })
    }

    fn check_classes(&self) -> Result<(), ModelError> {
        let positives = self.labels.iter().filter(|y| **y).count();
        let negatives = self.labels.len() - positives;
        if positives < 2 || negatives < 2 {
            return Err(ModelError::InsufficientClasses {
                positives,
                negatives,
            });
        }
        Ok(())
    }

    pub fn subset(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet {
            feature_order: self.feature_order.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

pub fn train_forest(
    examples: &[(FeatureVector, bool)],
    config: &ForestConfig,
) -> Result<ModelArtifact, ModelError> {
    train_forest_on(&TrainingSet::from_examples(examples)?, config, true)
}

/// Trains with bootstrap samples and a random feature subset per split.
/// Each tree's randomness depends only on the seed and its index, so
/// `parallel` does not change the result.
pub fn train_forest_on(
    data: &TrainingSet,
    config: &ForestConfig,
    parallel: bool,
) -> Result<ModelArtifact, ModelError> {
    data.check_classes()?;
    if config.n_trees == 0 {
        return Err(ModelError::InvalidInput("n_trees must be positive".into()));
    }
    let params = TreeParams {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        features_per_split: config.features_per_split_for(data.feature_order.len()),
    };
    let grow = |i: usize| {
        TreeBuilder::new(
            &data.rows,
            &data.labels,
            &data.feature_order,
            params,
            ChaCha8Rng::seed_from_u64(tree_seed(config.seed, i)),
        )
        .grow_bootstrap()
    };
    let trees: Vec<DecisionTree> = if parallel {
        (0..config.n_trees).into_par_iter().map(grow).collect()
    } else {
        (0..config.n_trees).map(grow).collect()
    };
    Ok(ModelArtifact {
        format_version: MODEL_FORMAT_VERSION,
        kind: ModelKind::RandomForest,
        feature_order: data.feature_order.clone(),
        trees,
        training_config: Some(config.clone()),
        created_at: None,
    })
}
