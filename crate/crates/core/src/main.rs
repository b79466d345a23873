use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use repurpose::annotation::http::{serve, ServiceState, TOKEN_ENV};
use repurpose::annotation::{AnnotationStore, CycleConfig, PoolItem, Sampler, Stratum};
use repurpose::classifier::{
    grid_search, load_model, save_model, train_forest, ModelArtifact, ParamGrid, SelectionMetric,
};
use repurpose::config::{ProviderConfig, RunConfig};
use repurpose::fixture::{generate, FixtureConfig};
use repurpose::pipeline::{self, PipelineError, Result};
use repurpose::stats::CharacterizationReport;

#[derive(Parser)]
#[command(name = "repurpose", version, about = "Detect misleading account repurposing in archived tweet streams")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse archive files into the snapshot store.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Input files or glob patterns.
        #[arg(long = "input", num_args = 1..)]
        inputs: Vec<String>,
    },
    /// Extract screen-name change events from the store.
    Changes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute feature vectors for change events.
    Features {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        changes: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Families joined by '-', e.g. EDT-DSIM-MD-STY.
        #[arg(long)]
        families: Option<String>,
        /// Add the averaged style vector to the STY family.
        #[arg(long)]
        style_fused: bool,
        #[arg(long, requires = "embedding_responses")]
        embedding_requests: Option<PathBuf>,
        #[arg(long, requires = "embedding_requests")]
        embedding_responses: Option<PathBuf>,
    },
    /// Train a random forest on labeled feature vectors.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        n_trees: Option<usize>,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long)]
        min_leaf: Option<usize>,
        /// Pick hyperparameters by stratified cross-validation first.
        #[arg(long)]
        grid: bool,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value = "f1", value_parser = ["f1", "auc"])]
        metric: String,
    },
    /// Score feature vectors with a model or the baseline rule.
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, conflicts_with = "baseline")]
        model: Option<PathBuf>,
        /// Use the edit-distance rule (default when no model is given).
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare predictions with labels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Statistical comparison of repurposed and other change events.
    Characterize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        changes: Option<PathBuf>,
        /// `event_ref,label` file; predictions.csv works too.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add change events to the annotation queue.
    Enqueue {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        annotation_dir: Option<PathBuf>,
        #[arg(long)]
        changes: Option<PathBuf>,
        #[arg(long, default_value = "integrity")]
        stratum: String,
        #[arg(long, conflicts_with = "uniform")]
        top_k: Option<usize>,
        #[arg(long)]
        uniform: Option<usize>,
        #[arg(long)]
        required_annotators: Option<usize>,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        annotation_dir: Option<PathBuf>,
        #[arg(long)]
        changes: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value_t = 50)]
        budget: usize,
    },
    /// Ingest, extract, featurize, train or classify, and report.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long = "input", num_args = 1..)]
        inputs: Vec<String>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        families: Option<String>,
        #[arg(long)]
        holdout: Option<f64>,
        #[arg(long)]
        n_trees: Option<usize>,
    },
    /// Write the seeded synthetic archive and its labels.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        accounts: usize,
        #[arg(long, default_value_t = 2022)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        files: usize,
    },
}

fn apply_common(config: &mut RunConfig, c: &Common) {
    if let Some(s) = &c.store {
        config.store_dir = s.clone();
    }
    if let Some(o) = &c.out_dir {
        config.output_dir = o.clone();
    }
    if let Some(s) = c.seed {
        config.seed = s;
    }
    if let Some(w) = c.workers {
        config.workers = w;
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::Other(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(PipelineError::MissingInput)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Ingest { common, inputs } => {
            apply_common(&mut config, &common);
            if !inputs.is_empty() {
                config.inputs = inputs;
            }
            let (summary, stats) = pipeline::ingest(&config.inputs, &config.store_dir, config.workers)?;
            print_json(&json!({
                "summary": summary,
                "elapsed_seconds": stats.elapsed,
                "throughput_mb_s": stats.throughput_mb_s(),
            }));
        }
        Command::Changes { common, out } => {
            apply_common(&mut config, &common);
            let out = out.unwrap_or_else(|| pipeline::output_path(&config, "changes.jsonl"));
            let events = pipeline::extract_changes(&config.store_dir)?;
            ensure_parent(&out)?;
            pipeline::write_changes(&events, &out)?;
            print_json(&json!({ "change_events": events.len(), "out": out }));
        }
        Command::Features {
            common,
            changes,
            out,
            families,
            style_fused,
            embedding_requests,
            embedding_responses,
        } => {
            apply_common(&mut config, &common);
            if let Some(f) = families {
                config.families = f;
            }
            config.style_fused |= style_fused;
            if let (Some(requests), Some(responses)) = (embedding_requests, embedding_responses) {
                config.provider = ProviderConfig::External { requests, responses };
            }
            let changes = changes.unwrap_or_else(|| pipeline::output_path(&config, "changes.jsonl"));
            let out = out.unwrap_or_else(|| pipeline::output_path(&config, "features.csv"));
            let events = pipeline::read_changes(&changes)?;
            let provider = pipeline::provider(&config.provider, &events)?;
            let fc = config.feature_config().map_err(PipelineError::Other)?;
            let vectors = pipeline::compute_features(&events, &fc, provider.as_ref())?;
            ensure_parent(&out)?;
            pipeline::write_features(&vectors, &out)?;
            print_json(&json!({ "vectors": vectors.len(), "out": out }));
        }
        Command::Train {
            common,
            features,
            labels,
            model,
            n_trees,
            max_depth,
            min_leaf,
            grid,
            folds,
            metric,
        } => {
            apply_common(&mut config, &common);
            config.n_trees = n_trees.unwrap_or(config.n_trees);
            config.max_depth = max_depth.unwrap_or(config.max_depth);
            config.min_leaf = min_leaf.unwrap_or(config.min_leaf);
            let features = features.unwrap_or_else(|| pipeline::output_path(&config, "features.csv"));
            let labels_path = labels
                .or(config.labels.clone())
                .ok_or_else(|| PipelineError::MissingInput("--labels is required".into()))?;
            let model_path = model
                .or(config.model_path.clone())
                .unwrap_or_else(|| pipeline::output_path(&config, "model.json"));
            let vectors = pipeline::read_features(&features)?;
            let labels = pipeline::read_labels(&labels_path)?;
            let examples = pipeline::labeled_examples(&vectors, &labels, None);
            let mut forest = config.forest();
            let mut search = None;
            if grid {
                let metric = if metric == "auc" { SelectionMetric::Auc } else { SelectionMetric::F1 };
                let g = ParamGrid {
                    seed: config.seed,
                    ..ParamGrid::default()
                };
                let result = grid_search(&examples, &g.expand(), folds, config.seed, metric)?;
                forest = result.best.clone();
                search = Some(result);
            }
            let trained = train_forest(&examples, &forest)?;
            ensure_parent(&model_path)?;
            save_model(&trained, &model_path)?;
            print_json(&json!({
                "model": model_path,
                "examples": examples.len(),
                "config": forest,
                "grid_search": search,
            }));
        }
        Command::Classify {
            common,
            features,
            model,
            baseline,
            threshold,
            out,
        } => {
            apply_common(&mut config, &common);
            let features = features.unwrap_or_else(|| pipeline::output_path(&config, "features.csv"));
            let out = out.unwrap_or_else(|| pipeline::output_path(&config, "predictions.csv"));
            let model = match (baseline, model.or(config.model_path.clone())) {
                (false, Some(p)) => load_model(&p)?,
                _ => ModelArtifact::baseline(),
            };
            let threshold = threshold.unwrap_or(config.threshold);
            let vectors = pipeline::read_features(&features)?;
            let preds = pipeline::classify(&model, &vectors, threshold)?;
            ensure_parent(&out)?;
            pipeline::write_predictions(&preds, &out)?;
            print_json(&json!({
                "model_kind": model.kind,
                "scored": preds.len(),
                "positive": preds.iter().filter(|p| p.label).count(),
                "out": out,
            }));
        }
        Command::Evaluate {
            common,
            predictions,
            labels,
            threshold,
        } => {
            apply_common(&mut config, &common);
            let predictions = predictions.unwrap_or_else(|| pipeline::output_path(&config, "predictions.csv"));
            let labels_path = labels
                .or(config.labels.clone())
                .ok_or_else(|| PipelineError::MissingInput("--labels is required".into()))?;
            let preds = pipeline::read_predictions(&predictions)?;
            let labels = pipeline::read_labels(&labels_path)?;
            let report = pipeline::evaluate_predictions(&preds, &labels, threshold.unwrap_or(config.threshold))?;
            print_json(&report);
        }
        Command::Characterize {
            common,
            changes,
            labels,
            out,
        } => {
            apply_common(&mut config, &common);
            let changes = changes.unwrap_or_else(|| pipeline::output_path(&config, "changes.jsonl"));
            let out = out.unwrap_or_else(|| pipeline::output_path(&config, "characterization"));
            let labels_path = labels
                .or(config.labels.clone())
                .ok_or_else(|| PipelineError::MissingInput("--labels is required".into()))?;
            let events = pipeline::read_changes(&changes)?;
            let labels = if labels_path.file_name().is_some_and(|n| n == "predictions.csv") {
                pipeline::read_predictions(&labels_path)?
                    .into_iter()
                    .map(|p| (p.event_ref, p.label))
                    .collect()
            } else {
                pipeline::read_labels(&labels_path)?
            };
            let (events, ys): (Vec<_>, Vec<_>) = events
                .into_iter()
                .filter_map(|e| labels.get(&e.event_ref).map(|y| (e, *y)))
                .unzip();
            let report = CharacterizationReport::build(&events, &ys)
                .map_err(|e| PipelineError::Other(e.to_string()))?;
            report
                .write(&out, &events, &ys)
                .map_err(|e| PipelineError::Other(format!("{}: {e}", out.display())))?;
            print!("{}", report.to_text());
        }
        Command::Enqueue {
            common,
            annotation_dir,
            changes,
            stratum,
            top_k,
            uniform,
            required_annotators,
        } => {
            apply_common(&mut config, &common);
            let dir = annotation_dir.unwrap_or(config.annotation_dir.clone());
            let changes = changes.unwrap_or_else(|| pipeline::output_path(&config, "changes.jsonl"));
            let events = pipeline::read_changes(&changes)?;
            let stratum: Stratum = stratum.parse().map_err(|e: repurpose::annotation::AnnotationError| PipelineError::Other(e.to_string()))?;
            let sampler = match (top_k, uniform) {
                (_, Some(n)) => Sampler::Uniform { n, seed: config.seed },
                (Some(k), None) => Sampler::TopKFollowers { k },
                (None, None) => Sampler::TopKFollowers { k: events.len() },
            };
            let mut store = AnnotationStore::open(&dir).map_err(|e| PipelineError::Other(e.to_string()))?;
            if let Some(n) = required_annotators {
                store.set_required_annotators(n).map_err(|e| PipelineError::Other(e.to_string()))?;
            }
            let outcome = store
                .enqueue(&events, stratum, sampler)
                .map_err(|e| PipelineError::Other(e.to_string()))?;
            print_json(&outcome);
        }
        Command::Serve {
            common,
            annotation_dir,
            changes,
            features,
            model,
            addr,
            budget,
        } => {
            apply_common(&mut config, &common);
            let dir = annotation_dir.unwrap_or(config.annotation_dir.clone());
            let changes = changes.unwrap_or_else(|| pipeline::output_path(&config, "changes.jsonl"));
            let features = features.unwrap_or_else(|| pipeline::output_path(&config, "features.csv"));
            let model_path = model.or(config.model_path.clone());
            let events = pipeline::read_changes(&changes)?;
            let vectors = pipeline::read_features(&features)?;
            let by_ref: std::collections::HashMap<_, _> =
                vectors.into_iter().map(|v| (v.event_ref.clone(), v)).collect();
            let pool: Vec<PoolItem> = events
                .into_iter()
                .filter_map(|e| by_ref.get(&e.event_ref).cloned().map(|features| PoolItem { event: e, features }))
                .collect();
            let model = match &model_path {
                Some(p) if p.exists() => load_model(p)?,
                _ => ModelArtifact::baseline(),
            };
            let store = AnnotationStore::open(&dir).map_err(|e| PipelineError::Other(e.to_string()))?;
            let state = ServiceState {
                store,
                pool,
                model,
                model_path,
                cycle: CycleConfig {
                    budget,
                    forest: config.forest(),
                    ..CycleConfig::default()
                },
                token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| PipelineError::Other(e.to_string()))?;
            runtime
                .block_on(serve(addr, Arc::new(Mutex::new(state))))
                .map_err(|e| PipelineError::Other(e.to_string()))?;
        }
        Command::Pipeline {
            common,
            inputs,
            labels,
            model,
            families,
            holdout,
            n_trees,
        } => {
            apply_common(&mut config, &common);
            if !inputs.is_empty() {
                config.inputs = inputs;
            }
            config.labels = labels.or(config.labels);
            config.model_path = model.or(config.model_path);
            if let Some(f) = families {
                config.families = f;
            }
            config.holdout_fraction = holdout.unwrap_or(config.holdout_fraction);
            config.n_trees = n_trees.unwrap_or(config.n_trees);
            let report = pipeline::run_pipeline(&config)?;
            print!("{}", report.to_text());
        }
        Command::Fixture {
            out,
            accounts,
            seed,
            files,
        } => {
            let summary = generate(
                &out,
                &FixtureConfig {
                    accounts,
                    seed,
                    files,
                    ..FixtureConfig::default()
                },
            )
            .map_err(|e| PipelineError::Other(format!("{}: {e}", out.display())))?;
            print_json(&json!({
                "files": summary.files,
                "labels": summary.labels_path,
                "lines": summary.lines,
                "planted_positives": summary.planted_positives().len(),
            }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.category(), "message": e.to_string() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
