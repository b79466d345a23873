//! File-based stages behind the command-line tool.
//!
//! Each stage reads and writes plain files in the output directory so a run
//! can be resumed or inspected at any point:
//!
//! | stage | output |
//! |-------|--------|
//! | ingest | snapshot store directory |
//! | changes | `changes.jsonl` |
//! | features | `features.csv` |
//! | train | `model.json` |
//! | classify | `predictions.csv` |
//! | report | `report.json`, `report.txt`, `characterization/` |
//!
//! Wall-clock values only appear in `run_meta.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    evaluate, load_model, save_model, train_forest, EvalReport, ModelArtifact, ModelError,
    ModelKind,
};
use crate::config::{ProviderConfig, RunConfig};
use crate::features::embedding::{
    write_embedding_requests, BatchFileEmbedding, EmbeddingProvider, HashedNgramEmbedding,
};
use crate::features::style::split_sentences;
use crate::features::{
    assemble, combined_profile_text, read_feature_csv, write_feature_csv, FeatureConfig,
    FeatureError, FeatureVector,
};
use crate::ingest::{expand_inputs, ingest_stream, FileFailure, IngestStats};
use crate::stats::CharacterizationReport;
use crate::store::{ChangeEvent, SnapshotStore, StoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("corrupt store: {0}")]
    CorruptStore(String),
    #[error("model/feature mismatch: {0}")]
    ModelMismatch(String),
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    pub fn category(&self) -> &'static str {
        match self {
            PipelineError::MissingInput(_) => "missing_input",
            PipelineError::CorruptStore(_) => "corrupt_store",
            PipelineError::ModelMismatch(_) => "model_mismatch",
            PipelineError::Other(_) => "error",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingInput(_) => 2,
            PipelineError::CorruptStore(_) => 3,
            PipelineError::ModelMismatch(_) => 4,
            PipelineError::Other(_) => 1,
        }
    }
}

impl From<StoreError> for PipelineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Corrupt { .. } | StoreError::Version { .. } => {
                PipelineError::CorruptStore(e.to_string())
            }
            other => PipelineError::Other(other.to_string()),
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::MissingFeature(_)
            | ModelError::FeatureMismatch(_)
            | ModelError::Version { .. }
            | ModelError::Corrupt(_) => PipelineError::ModelMismatch(e.to_string()),
            ModelError::Io(m) => PipelineError::MissingInput(m),
            other => PipelineError::Other(other.to_string()),
        }
    }
}

impl From<FeatureError> for PipelineError {
    fn from(e: FeatureError) -> Self {
        PipelineError::Other(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            PipelineError::MissingInput(format!("{}: {e}", path.display()))
        } else {
            PipelineError::Other(format!("{}: {e}", path.display()))
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Ingest counters without the wall-clock fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub files: usize,
    pub records_read: u64,
    pub records_malformed: u64,
    pub snapshots_parsed: u64,
    pub snapshots_emitted: u64,
    pub tweets_emitted: u64,
    pub distinct_users: u64,
    pub bytes_processed: u64,
    pub failed_files: Vec<FileFailure>,
}

impl IngestSummary {
    fn new(files: usize, s: &IngestStats) -> Self {
        Self {
            files,
            records_read: s.records_read,
            records_malformed: s.records_malformed,
            snapshots_parsed: s.snapshots_parsed,
            snapshots_emitted: s.snapshots_emitted,
            tweets_emitted: s.tweets_emitted,
            distinct_users: s.distinct_users,
            bytes_processed: s.bytes_processed,
            failed_files: s.failed_files.clone(),
        }
    }
}

pub fn ingest(patterns: &[String], store_dir: &Path, workers: usize) -> Result<(IngestSummary, IngestStats)> {
    let files = expand_inputs(patterns).map_err(PipelineError::MissingInput)?;
    if files.is_empty() {
        return Err(PipelineError::MissingInput(format!(
            "no input files match {patterns:?}"
        )));
    }
    let store = SnapshotStore::open(store_dir)?;
    let stats = ingest_stream(&files, &store, workers);
    store.flush()?;
    log::info!(
        "ingested {} records ({} malformed) from {} files at {:.1} MB/s",
        stats.records_read,
        stats.records_malformed,
        files.len(),
        stats.throughput_mb_s()
    );
    Ok((IngestSummary::new(files.len(), &stats), stats))
}

fn open_existing_store(store_dir: &Path) -> Result<SnapshotStore> {
    if !store_dir.is_dir() {
        return Err(PipelineError::MissingInput(format!(
            "store {} does not exist",
            store_dir.display()
        )));
    }
    Ok(SnapshotStore::open(store_dir)?)
}

/// Every change event in the store, sorted by event reference.
pub fn extract_changes(store_dir: &Path) -> Result<Vec<ChangeEvent>> {
    let store = open_existing_store(store_dir)?;
    let mut events = store.view().all_change_events();
    events.sort_by(|a, b| a.event_ref.cmp(&b.event_ref));
    Ok(events)
}

pub fn write_changes(events: &[ChangeEvent], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for e in events {
        let line = serde_json::to_string(e).map_err(|e| PipelineError::Other(e.to_string()))?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_changes(path: &Path) -> Result<Vec<ChangeEvent>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            PipelineError::Other(format!("{}:{}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

/// Texts an embedding provider will be asked for when computing features
/// of `events`.
pub fn embedding_texts(events: &[ChangeEvent]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for e in events {
        out.insert(combined_profile_text(&e.prev));
        out.insert(combined_profile_text(&e.next));
        for side in [&e.tweets_before, &e.tweets_after] {
            let joined = side.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join("\n");
            out.extend(split_sentences(&joined).into_iter().map(str::to_string));
        }
    }
    out
}

/// Builds the configured provider. For an external provider whose response
/// file is absent, the request file is written and a missing-input error
/// returned.
pub fn provider(config: &ProviderConfig, events: &[ChangeEvent]) -> Result<Box<dyn EmbeddingProvider>> {
    match config {
        ProviderConfig::Default => Ok(Box::new(HashedNgramEmbedding::default())),
        ProviderConfig::External { requests, responses } => {
            if !responses.exists() {
                let texts = embedding_texts(events);
                let n = write_embedding_requests(texts.iter().map(String::as_str), requests)?;
                return Err(PipelineError::MissingInput(format!(
                    "wrote {n} embedding requests to {}; provide vectors in {}",
                    requests.display(),
                    responses.display()
                )));
            }
            Ok(Box::new(BatchFileEmbedding::load(requests, responses)?))
        }
    }
}

pub fn compute_features(
    events: &[ChangeEvent],
    config: &FeatureConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<FeatureVector>> {
    events
        .par_iter()
        .map(|e| assemble(e, config, provider).map_err(PipelineError::from))
        .collect()
}

pub fn write_features(vectors: &[FeatureVector], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    write_feature_csv(BufWriter::new(f), vectors)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureVector>> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(read_feature_csv(BufReader::new(f))?)
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "positive" | "1" | "true" | "yes" | "+" => Some(true),
        "negative" | "0" | "false" | "no" | "-" => Some(false),
        _ => None,
    }
}

/// Reads an `event_ref,label` CSV. Rows with other labels (such as `unsure`)
/// are skipped.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, bool>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(f);
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))?;
        let (Some(r), Some(l)) = (row.get(0), row.get(1)) else {
            continue;
        };
        if let Some(y) = parse_label(l) {
            out.insert(r.to_string(), y);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub event_ref: String,
    pub score: f64,
    pub label: bool,
}

pub fn classify(model: &ModelArtifact, vectors: &[FeatureVector], threshold: f64) -> Result<Vec<Prediction>> {
    let compiled = model.compile();
    vectors
        .iter()
        .map(|fv| {
            let score = compiled.score(fv)?;
            Ok(Prediction {
                event_ref: fv.event_ref.clone(),
                score,
                label: score >= threshold,
            })
        })
        .collect()
}

pub fn write_predictions(preds: &[Prediction], path: &Path) -> Result<()> {
    let mut s = String::from("event_ref,score,label\n");
    for p in preds {
        let _ = writeln!(s, "{},{},{}", p.event_ref, p.score, if p.label { "positive" } else { "negative" });
    }
    fs::write(path, s).map_err(io_err(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(f);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))?;
        let bad = || PipelineError::Other(format!("{}: malformed row {row:?}", path.display()));
        let score: f64 = row.get(1).and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        out.push(Prediction {
            event_ref: row.get(0).ok_or_else(bad)?.to_string(),
            score,
            label: row.get(2).and_then(parse_label).ok_or_else(bad)?,
        });
    }
    Ok(out)
}

/// Scores `preds` against `labels`; predictions without a label are ignored.
pub fn evaluate_predictions(
    preds: &[Prediction],
    labels: &BTreeMap<String, bool>,
    threshold: f64,
) -> Result<EvalReport> {
    let (scores, ys): (Vec<f64>, Vec<bool>) = preds
        .iter()
        .filter_map(|p| labels.get(&p.event_ref).map(|y| (p.score, *y)))
        .unzip();
    if scores.is_empty() {
        return Err(PipelineError::MissingInput("no prediction has a label".into()));
    }
    Ok(evaluate(&scores, &ys, threshold)?)
}

/// Stratified split of labeled refs into (train, holdout).
pub fn holdout_split(
    labels: &BTreeMap<String, bool>,
    fraction: f64,
    seed: u64,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut holdout) = (BTreeSet::new(), BTreeSet::new());
    for class in [true, false] {
        let mut refs: Vec<&String> = labels.iter().filter(|(_, y)| **y == class).map(|(r, _)| r).collect();
        refs.shuffle(&mut rng);
        let k = (refs.len() as f64 * fraction).round() as usize;
        for (i, r) in refs.into_iter().enumerate() {
            if i < k {
                holdout.insert(r.clone());
            } else {
                train.insert(r.clone());
            }
        }
    }
    (train, holdout)
}

pub fn labeled_examples(
    vectors: &[FeatureVector],
    labels: &BTreeMap<String, bool>,
    keep: Option<&BTreeSet<String>>,
) -> Vec<(FeatureVector, bool)> {
    vectors
        .iter()
        .filter(|fv| keep.is_none_or(|k| k.contains(&fv.event_ref)))
        .filter_map(|fv| labels.get(&fv.event_ref).map(|y| (fv.clone(), *y)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub train_size: usize,
    pub holdout_size: usize,
    pub forest: EvalReport,
    pub baseline: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub ingest: IngestSummary,
    pub users: usize,
    pub snapshots: usize,
    pub change_events: usize,
    pub changed_users: usize,
    pub feature_count: usize,
    pub model_kind: ModelKind,
    pub threshold: f64,
    pub holdout: Option<HoldoutReport>,
    /// Baseline rule against every labeled event.
    pub baseline_all_labeled: Option<EvalReport>,
    /// Events the final model flags as repurposed.
    pub flagged: Vec<String>,
}

impl PipelineReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(
            s,
            "ingest: {} records from {} files, {} malformed, {} snapshots stored, {} users",
            self.ingest.records_read,
            self.ingest.files,
            self.ingest.records_malformed,
            self.ingest.snapshots_emitted,
            self.ingest.distinct_users
        );
        let _ = writeln!(
            s,
            "changes: {} events across {} users ({} snapshots for {} users in store)",
            self.change_events, self.changed_users, self.snapshots, self.users
        );
        let _ = writeln!(s, "model: {:?} over {} features, threshold {}", self.model_kind, self.feature_count, self.threshold);
        let fmt = |r: &EvalReport| {
            format!(
                "precision {:.4} recall {:.4} f1 {:.4} auc {}",
                r.precision,
                r.recall,
                r.f1,
                r.auc.map_or("n/a".into(), |a| format!("{a:.4}"))
            )
        };
        if let Some(h) = &self.holdout {
            let _ = writeln!(s, "holdout ({} train / {} test):", h.train_size, h.holdout_size);
            let _ = writeln!(s, "  forest:   {}", fmt(&h.forest));
            let _ = writeln!(s, "  baseline: {}", fmt(&h.baseline));
        }
        if let Some(b) = &self.baseline_all_labeled {
            let _ = writeln!(s, "baseline on all labeled events: {}", fmt(b));
        }
        let _ = writeln!(s, "flagged: {} events", self.flagged.len());
        for r in &self.flagged {
            let _ = writeln!(s, "  {r}");
        }
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub elapsed_seconds: f64,
    pub ingest_elapsed_seconds: f64,
    pub ingest_throughput_mb_s: f64,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Other(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Runs ingest, changes, features, (train), classify and report.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineReport> {
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let feature_config = config.feature_config().map_err(PipelineError::Other)?;
    let labels = match &config.labels {
        Some(p) => Some(read_labels(p)?),
        None => None,
    };

    let (summary, ingest_stats) = ingest(&config.inputs, &config.store_dir, config.workers)?;
    let store = open_existing_store(&config.store_dir)?;
    let view = store.view();
    let scan = view.scan_changed_users();
    let mut events = view.all_change_events();
    events.sort_by(|a, b| a.event_ref.cmp(&b.event_ref));
    write_changes(&events, &out.join("changes.jsonl"))?;

    let provider = provider(&config.provider, &events)?;
    let vectors = compute_features(&events, &feature_config, provider.as_ref())?;
    write_features(&vectors, &out.join("features.csv"))?;

    let baseline = ModelArtifact::baseline();
    let mut holdout = None;
    let mut baseline_all = None;
    let model = match (&labels, &config.model_path) {
        (Some(labels), _) => {
            let (train_refs, test_refs) = holdout_split(labels, config.holdout_fraction, config.seed);
            let train = labeled_examples(&vectors, labels, Some(&train_refs));
            let model = train_forest(&train, &config.forest())?;
            let test: Vec<&FeatureVector> = vectors.iter().filter(|v| test_refs.contains(&v.event_ref)).collect();
            if !test.is_empty() {
                let test_vectors: Vec<FeatureVector> = test.into_iter().cloned().collect();
                let forest_preds = classify(&model, &test_vectors, config.threshold)?;
                let base_preds = classify(&baseline, &test_vectors, 0.5)?;
                holdout = Some(HoldoutReport {
                    train_size: train.len(),
                    holdout_size: test_vectors.len(),
                    forest: evaluate_predictions(&forest_preds, labels, config.threshold)?,
                    baseline: evaluate_predictions(&base_preds, labels, 0.5)?,
                });
            }
            let base_preds = classify(&baseline, &vectors, 0.5)?;
            baseline_all = evaluate_predictions(&base_preds, labels, 0.5).ok();
            save_model(&model, &out.join("model.json"))?;
            model
        }
        (None, Some(path)) => load_model(path)?,
        (None, None) => baseline.clone(),
    };
    let threshold = if model.kind == ModelKind::BaselineTree { 0.5 } else { config.threshold };
    let preds = classify(&model, &vectors, threshold)?;
    write_predictions(&preds, &out.join("predictions.csv"))?;

    let char_labels: Vec<bool> = events
        .iter()
        .zip(&preds)
        .map(|(e, p)| labels.as_ref().and_then(|l| l.get(&e.event_ref).copied()).unwrap_or(p.label))
        .collect();
    match CharacterizationReport::build(&events, &char_labels) {
        Ok(c) => c
            .write(&out.join("characterization"), &events, &char_labels)
            .map_err(io_err(out))?,
        Err(e) => log::warn!("characterization skipped: {e}"),
    }

    let report = PipelineReport {
        seed: config.seed,
        ingest: summary,
        users: view.user_count(),
        snapshots: view.snapshot_count(),
        change_events: events.len(),
        changed_users: scan.users.len(),
        feature_count: vectors.first().map_or(0, |v| v.values.len()),
        model_kind: model.kind,
        threshold,
        holdout,
        baseline_all_labeled: baseline_all,
        flagged: preds.iter().filter(|p| p.label).map(|p| p.event_ref.clone()).collect(),
    };
    write_json(&report, &out.join("report.json"))?;
    fs::write(out.join("report.txt"), report.to_text()).map_err(io_err(out))?;
    write_json(
        &RunMeta {
            seed: config.seed,
            started_at: started.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            elapsed_seconds: clock.elapsed().as_secs_f64(),
            ingest_elapsed_seconds: ingest_stats.elapsed,
            ingest_throughput_mb_s: ingest_stats.throughput_mb_s(),
        },
        &out.join("run_meta.json"),
    )?;
    Ok(report)
}

/// Where a stage's default output goes.
pub fn output_path(config: &RunConfig, name: &str) -> PathBuf {
    config.output_dir.join(name)
}
