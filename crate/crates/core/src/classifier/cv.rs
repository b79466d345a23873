use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{auc, evaluate, EvalReport};
use super::{train_forest_on, ForestConfig, ModelError, TrainingSet};
use crate::features::FeatureVector;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    F1,
    Auc,
}

/// Cartesian product of hyperparameter lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub min_leaf: Vec<usize>,
    pub features_per_split: Vec<Option<usize>>,
    pub seed: u64,
}

impl Default for ParamGrid {
    fn default() -> Self {
        Self {
            n_trees: vec![50, 100],
            max_depth: vec![4, 8],
            min_leaf: vec![1, 2],
            features_per_split: vec![None],
            seed: 42,
        }
    }
}

impl ParamGrid {
    pub fn expand(&self) -> Vec<ForestConfig> {
        let mut out = Vec::new();
        for &n_trees in &self.n_trees {
            for &max_depth in &self.max_depth {
                for &min_leaf in &self.min_leaf {
                    for &features_per_split in &self.features_per_split {
                        out.push(ForestConfig {
                            n_trees,
                            max_depth,
                            min_leaf,
                            features_per_split,
                            seed: self.seed,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Stratified folds: each class is shuffled and dealt round-robin, the
/// second class continuing where the first stopped so fold sizes stay
/// balanced. Indices within a fold are sorted.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, ModelError> {
    if k < 2 {
        return Err(ModelError::InvalidInput("k_folds must be at least 2".into()));
    }
    if labels.len() < k {
        return Err(ModelError::InvalidInput(format!(
            "{} examples cannot fill {k} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub config: ForestConfig,
    /// Metrics over the pooled out-of-fold scores at threshold 0.5.
    pub report: EvalReport,
    /// AUC of each fold holding both classes.
    pub fold_aucs: Vec<f64>,
    pub skipped_folds: Vec<usize>,
}

impl CvResult {
    pub fn selection_score(&self, metric: SelectionMetric) -> f64 {
        match metric {
            SelectionMetric::F1 => self.report.f1,
            SelectionMetric::Auc if !self.fold_aucs.is_empty() => {
                self.fold_aucs.iter().sum::<f64>() / self.fold_aucs.len() as f64
            }
            SelectionMetric::Auc => self.report.auc.unwrap_or(0.0),
        }
    }
}

fn cross_validate_set(
    data: &TrainingSet,
    config: &ForestConfig,
    folds: &[Vec<usize>],
) -> Result<CvResult, ModelError> {
    let n = data.labels.len();
    let mut oof = vec![0.0; n];
    let mut fold_aucs = Vec::new();
    let mut skipped_folds = Vec::new();
    for (f, test_idx) in folds.iter().enumerate() {
        let mut in_test = vec![false; n];
        for &i in test_idx {
            in_test[i] = true;
        }
        let train_idx: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        let model = train_forest_on(&data.subset(&train_idx), config, true)?;
        let compiled = model.compile();
        let fold_scores: Vec<f64> = test_idx
            .iter()
            .map(|&i| compiled.score_row(&data.rows[i]))
            .collect();
        let fold_labels: Vec<bool> = test_idx.iter().map(|&i| data.labels[i]).collect();
        for (&i, &s) in test_idx.iter().zip(&fold_scores) {
            oof[i] = s;
        }
        match auc(&fold_scores, &fold_labels) {
            Ok(a) => fold_aucs.push(a),
            Err(ModelError::AucUndefined) => {
                log::warn!("fold {f} holds a single class; its AUC is skipped");
                skipped_folds.push(f);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(CvResult {
        config: config.clone(),
        report: evaluate(&oof, &data.labels, 0.5)?,
        fold_aucs,
        skipped_folds,
    })
}

pub fn cross_validate(
    examples: &[(FeatureVector, bool)],
    config: &ForestConfig,
    k_folds: usize,
    seed: u64,
) -> Result<CvResult, ModelError> {
    let data = TrainingSet::from_examples(examples)?;
    let folds = stratified_folds(&data.labels, k_folds, seed)?;
    cross_validate_set(&data, config, &folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub best: ForestConfig,
    pub metric: SelectionMetric,
    pub results: Vec<CvResult>,
}

/// Cross-validates every config on the same stratified folds and picks the
/// highest selection score; ties keep the earlier config.
pub fn grid_search(
    examples: &[(FeatureVector, bool)],
    grid: &[ForestConfig],
    k_folds: usize,
    seed: u64,
    metric: SelectionMetric,
) -> Result<GridSearchResult, ModelError> {
    if grid.is_empty() {
        return Err(ModelError::InvalidInput("empty parameter grid".into()));
    }
    let data = TrainingSet::from_examples(examples)?;
    let folds = stratified_folds(&data.labels, k_folds, seed)?;
    let results = grid
        .iter()
        .map(|cfg| cross_validate_set(&data, cfg, &folds))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best_index = 0;
    for (i, r) in results.iter().enumerate() {
        if r.selection_score(metric) > results[best_index].selection_score(metric) {
            best_index = i;
        }
    }
    Ok(GridSearchResult {
        best_index,
        best: grid[best_index].clone(),
        metric,
        results,
    })
}
