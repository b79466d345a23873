//! Python bindings for the `repurpose` crate.
//!
//! Structured results cross the boundary as JSON and are decoded with the
//! standard `json` module, so callers get plain dicts and lists.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use repurpose::annotation::{cohen_kappa as kappa2, fleiss_kappa as kappa_n, Label, UnsureMode};
use repurpose::classifier::{evaluate as eval_scores, ForestConfig, ModelArtifact};
use repurpose::config::RunConfig;
use repurpose::features::embedding::HashedNgramEmbedding;
use repurpose::features::{self, Family, FeatureConfig, FeatureVector};
use repurpose::pipeline;
use repurpose::stats::{self, ContingencyTable2x2};
use repurpose::store::{ChangeEvent, SnapshotStore};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyfunction]
fn levenshtein(a: &str, b: &str) -> usize {
    features::text::levenshtein(a, b)
}

#[pyfunction]
fn nld(a: &str, b: &str) -> f64 {
    features::nld(a, b)
}

/// Returns `(length, normalized)`.
#[pyfunction]
fn longest_common_substring(a: &str, b: &str) -> (usize, f64) {
    let c = features::longest_common_substring(a, b);
    (c.length, c.normalized)
}

/// Returns `(common_count, jaccard)`.
#[pyfunction]
fn token_overlap(a: &str, b: &str) -> (usize, f64) {
    let t = features::token_overlap(a, b);
    (t.common_count, t.jaccard)
}

#[pyfunction]
fn baseline_classify(nld_name: f64, nld_description: f64) -> PyResult<bool> {
    let fv = vector_of(&[("nld_name", nld_name), ("nld_description", nld_description)]);
    repurpose::classifier::baseline_classify(&fv).map_err(value_err)
}

fn vector_of(pairs: &[(&str, f64)]) -> FeatureVector {
    FeatureVector {
        event_ref: "python".into(),
        values: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        families: vec![],
    }
}

fn labels(xs: &[String]) -> PyResult<Vec<Label>> {
    xs.iter().map(|s| s.parse::<Label>().map_err(value_err)).collect()
}

#[pyfunction]
#[pyo3(signature = (a, b, mode = "include_unsure"))]
fn cohen_kappa(a: Vec<String>, b: Vec<String>, mode: &str) -> PyResult<f64> {
    let mode: UnsureMode = mode.parse().map_err(value_err)?;
    kappa2(&labels(&a)?, &labels(&b)?, mode).map_err(value_err)
}

#[pyfunction]
fn fleiss_kappa(matrix: Vec<Vec<usize>>) -> PyResult<f64> {
    kappa_n(&matrix).map_err(value_err)
}

/// Returns `(t, df, p_two_sided)`.
#[pyfunction]
fn welch_t_test(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = stats::welch_t_test(&x, &y).map_err(value_err)?;
    Ok((r.t, r.df, r.p_two_sided))
}

/// Returns `(statistic, p)` for the table `[[a, b], [c, d]]`.
#[pyfunction]
fn chi_squared_2x2(a: u64, b: u64, c: u64, d: u64) -> PyResult<(f64, f64)> {
    let r = stats::chi_squared_2x2(&ContingencyTable2x2::new([[a, b], [c, d]])).map_err(value_err)?;
    Ok((r.statistic, r.p))
}

#[pyfunction]
#[pyo3(signature = (scores, labels, threshold = 0.5))]
fn evaluate<'py>(py: Python<'py>, scores: Vec<f64>, labels: Vec<bool>, threshold: f64) -> PyResult<Bound<'py, PyAny>> {
    let report = eval_scores(&scores, &labels, threshold).map_err(value_err)?;
    to_py(py, &report)
}

/// Feature dict for one change event given as a JSON object.
#[pyfunction]
#[pyo3(signature = (event_json, families = "EDT-DSIM-MD-STY"))]
fn compute_features<'py>(py: Python<'py>, event_json: &str, families: &str) -> PyResult<Bound<'py, PyDict>> {
    let event: ChangeEvent = serde_json::from_str(event_json).map_err(value_err)?;
    let fams = Family::parse_list(families).map_err(value_err)?;
    let fv = features::assemble(&event, &FeatureConfig::new(&fams), &HashedNgramEmbedding::default())
        .map_err(value_err)?;
    let out = PyDict::new(py);
    for (k, v) in &fv.values {
        out.set_item(k, v)?;
    }
    Ok(out)
}

/// Runs the whole pipeline with a TOML configuration string and returns
/// the report.
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Bound<'py, PyAny>> {
    let config: RunConfig = toml::from_str(config_toml).map_err(value_err)?;
    let report = pipeline::run_pipeline(&config).map_err(value_err)?;
    to_py(py, &report)
}

#[pyclass(name = "SnapshotStore", unsendable)]
struct PySnapshotStore {
    inner: SnapshotStore,
}

#[pymethods]
impl PySnapshotStore {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: SnapshotStore::open(&path).map_err(|e| PyIOError::new_err(e.to_string()))?,
        })
    }

    /// Ingests archive files and returns the ingest statistics.
    #[pyo3(signature = (paths, workers = 1))]
    fn ingest<'py>(&self, py: Python<'py>, paths: Vec<PathBuf>, workers: usize) -> PyResult<Bound<'py, PyAny>> {
        let stats = repurpose::ingest::ingest_stream(&paths, &self.inner, workers);
        self.inner.flush().map_err(|e| PyIOError::new_err(e.to_string()))?;
        to_py(py, &stats)
    }

    fn user_count(&self) -> usize {
        self.inner.view().user_count()
    }

    fn snapshot_count(&self) -> usize {
        self.inner.view().snapshot_count()
    }

    fn timeline<'py>(&self, py: Python<'py>, user_id: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.timeline(user_id))
    }

    /// All change events, sorted by event reference.
    fn change_events<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let mut events = self.inner.view().all_change_events();
        events.sort_by(|a, b| a.event_ref.cmp(&b.event_ref));
        to_py(py, &events)
    }
}

#[pyclass(name = "Model")]
struct PyModel {
    inner: ModelArtifact,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn baseline() -> Self {
        Self {
            inner: ModelArtifact::baseline(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: repurpose::classifier::load_model(&path).map_err(value_err)?,
        })
    }

    /// Trains a forest from a feature CSV and an `event_ref,label` CSV.
    #[staticmethod]
    #[pyo3(signature = (features_csv, labels_csv, n_trees = 100, max_depth = 8, min_leaf = 2, seed = 42))]
    fn train(
        features_csv: PathBuf,
        labels_csv: PathBuf,
        n_trees: usize,
        max_depth: usize,
        min_leaf: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let vectors = pipeline::read_features(&features_csv).map_err(value_err)?;
        let labels = pipeline::read_labels(&labels_csv).map_err(value_err)?;
        let examples = pipeline::labeled_examples(&vectors, &labels, None);
        let config = ForestConfig {
            n_trees,
            max_depth,
            min_leaf,
            features_per_split: None,
            seed,
        };
        Ok(Self {
            inner: repurpose::classifier::train_forest(&examples, &config).map_err(value_err)?,
        })
    }

    #[getter]
    fn feature_order(&self) -> Vec<String> {
        self.inner.feature_order.clone()
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }

    /// Score for a `{feature: value}` dict.
    fn score(&self, features: BTreeMap<String, f64>) -> PyResult<f64> {
        let fv = FeatureVector {
            event_ref: "python".into(),
            values: features.into_iter().collect(),
            families: vec![],
        };
        repurpose::classifier::predict(&self.inner, &fv).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        repurpose::classifier::save_model(&self.inner, &path).map_err(value_err)
    }
}

#[pymodule]
fn repurpose_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(nld, m)?)?;
    m.add_function(wrap_pyfunction!(longest_common_substring, m)?)?;
    m.add_function(wrap_pyfunction!(token_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_classify, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(fleiss_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(chi_squared_2x2, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(compute_features, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_class::<PySnapshotStore>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
