//! Labeling queue, inter-annotator agreement and the active-learning loop.
//!
//! State lives in memory and, when the store was opened on a directory, is
//! rewritten to `annotation.json` after every mutation.

mod active;
pub mod http;
mod kappa;

pub use active::{active_learning_cycle, model_hash, CycleConfig, CycleOutcome, LineageEntry, PoolItem, Priority};
pub use kappa::{cohen_kappa, fleiss_kappa, UnsureMode};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{ChangeEvent, ProfileSnapshot};

pub const STATE_FILE: &str = "annotation.json";
pub const POPULAR_MIN_FOLLOWERS: u64 = 5_000;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),
    #[error("unknown candidate {0}")]
    UnknownCandidate(String),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("no labeled examples to train on")]
    NoLabels,
    #[error("annotation store i/o at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] crate::classifier::ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
    Unsure,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Positive, Label::Negative, Label::Unsure];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Unsure => "unsure",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            "unsure" => Ok(Label::Unsure),
            other => Err(AnnotationError::Invalid(format!(
                "label must be positive, negative or unsure, got {other:?}"
            ))),
        }
    }
}

/// Coding scheme tags for labeled cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodedCase {
    NewIdentity,
    CommercialActivity,
    SamePerson,
    PurposeOverloading,
    SlightChange,
    NoPurpose,
    Rebranding,
    NonSubstantial,
    PersonOrgUnclear,
    PseudonymChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    TopFollowers,
    RandomPopular,
    Integrity,
}

impl Stratum {
    /// Popular strata only admit accounts above the follower gate.
    pub fn is_popular(self) -> bool {
        matches!(self, Stratum::TopFollowers | Stratum::RandomPopular)
    }
}

impl FromStr for Stratum {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top_followers" => Ok(Stratum::TopFollowers),
            "random_popular" => Ok(Stratum::RandomPopular),
            "integrity" => Ok(Stratum::Integrity),
            other => Err(AnnotationError::Invalid(format!("unknown stratum {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Pending,
    Labeled,
    Skipped,
}

/// The profile attributes an annotator sees for one side of a change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleProfile {
    pub name: String,
    pub screen_name: String,
    pub description: String,
    pub location: String,
    pub url: String,
    pub profile_language: String,
    pub top_source: String,
    pub top_language: String,
    pub followers_count: u64,
}

impl VisibleProfile {
    fn new(s: &ProfileSnapshot, tweets: &[crate::store::TweetObservation]) -> Self {
        Self {
            name: s.name.clone(),
            screen_name: s.screen_name.clone(),
            description: s.description.clone(),
            location: s.location.clone(),
            url: s.url.clone(),
            profile_language: s.profile_language.clone(),
            top_source: ChangeEvent::top_source(tweets),
            top_language: ChangeEvent::top_language(tweets),
            followers_count: s.followers_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEvent {
    pub event_ref: String,
    pub user_id: String,
    pub prev: VisibleProfile,
    pub next: VisibleProfile,
}

impl CandidateEvent {
    pub fn from_event(e: &ChangeEvent) -> Self {
        Self {
            event_ref: e.event_ref.clone(),
            user_id: e.user_id.clone(),
            prev: VisibleProfile::new(&e.prev, &e.tweets_before),
            next: VisibleProfile::new(&e.next, &e.tweets_after),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    pub event: CandidateEvent,
    pub sampling_stratum: Stratum,
    pub status: CandidateStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub candidate_id: String,
    pub annotator_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coded_case: Option<CodedCase>,
    /// Set when the annotator marked the call as high-confidence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confident: Option<bool>,
    pub submitted_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Positive,
    Negative,
    Unsure,
    Disagree,
}

impl From<Label> for Resolution {
    fn from(l: Label) -> Self {
        match l {
            Label::Positive => Resolution::Positive,
            Label::Negative => Resolution::Negative,
            Label::Unsure => Resolution::Unsure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMethod {
    Unanimous,
    Adjudicated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalDecision {
    pub candidate_id: String,
    pub resolution: Resolution,
    pub method: DecisionMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Sampler {
    TopKFollowers { k: usize },
    Uniform { n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub event_ref: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnqueueOutcome {
    pub enqueued: Vec<String>,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueCounts {
    pub enqueued: usize,
    pub pending: usize,
    pub labeled: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportFilter {
    /// Only candidates whose required labels are all in.
    pub resolved_only: bool,
    /// Use one annotator's labels instead of final decisions.
    pub annotator: Option<String>,
}

impl Default for ExportFilter {
    fn default() -> Self {
        Self {
            resolved_only: true,
            annotator: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub annotator_a: String,
    pub annotator_b: String,
    pub items: usize,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub mode: UnsureMode,
    pub pairs: Vec<PairAgreement>,
    pub fleiss_kappa: Option<f64>,
    pub fleiss_items: usize,
    pub label_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationState {
    pub required_annotators: usize,
    pub popular_min_followers: u64,
    pub annotators: BTreeSet<String>,
    pub candidates: BTreeMap<String, Candidate>,
    /// candidate_id -> annotator_id -> current label
    pub labels: BTreeMap<String, BTreeMap<String, LabelRecord>>,
    /// Labels replaced by a resubmission, oldest first.
    pub audit: Vec<LabelRecord>,
    pub adjudications: BTreeMap<String, Label>,
    pub lineage: Vec<LineageEntry>,
    pub next_id: u64,
}

pub struct AnnotationStore {
    dir: Option<PathBuf>,
    state: AnnotationState,
}

impl AnnotationStore {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            state: AnnotationState {
                required_annotators: 1,
                popular_min_followers: POPULAR_MIN_FOLLOWERS,
                next_id: 1,
                ..AnnotationState::default()
            },
        }
    }

    /// Opens (or creates) the store in `dir`.
    pub fn open(dir: &Path) -> Result<Self, AnnotationError> {
        let io = |e: std::io::Error| AnnotationError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(io)?;
        let path = dir.join(STATE_FILE);
        let mut store = Self::in_memory();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(io)?;
            store.state = serde_json::from_str(&text).map_err(|e| AnnotationError::Io {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        store.dir = Some(dir.to_path_buf());
        Ok(store)
    }

    pub fn state(&self) -> &AnnotationState {
        &self.state
    }

    pub fn set_required_annotators(&mut self, n: usize) -> Result<(), AnnotationError> {
        if n == 0 {
            return Err(AnnotationError::Invalid("required_annotators must be positive".into()));
        }
        self.state.required_annotators = n;
        self.persist()
    }

    fn persist(&self) -> Result<(), AnnotationError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(STATE_FILE);
        let tmp = dir.join(format!("{STATE_FILE}.tmp"));
        let text = serde_json::to_string_pretty(&self.state).expect("state serializes");
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| AnnotationError::Io {
                path,
                message: e.to_string(),
            })
    }

    pub fn register_annotator(&mut self, annotator_id: &str) -> Result<(), AnnotationError> {
        if annotator_id.trim().is_empty() {
            return Err(AnnotationError::Invalid("empty annotator id".into()));
        }
        if self.state.annotators.insert(annotator_id.to_string()) {
            self.persist()?;
        }
        Ok(())
    }

    fn gate(&self, e: &ChangeEvent, stratum: Stratum) -> Option<String> {
        if stratum.is_popular() && e.prev.followers_count < self.state.popular_min_followers {
            return Some(format!(
                "popular stratum requires at least {} followers, account had {}",
                self.state.popular_min_followers, e.prev.followers_count
            ));
        }
        if self.is_enqueued(&e.event_ref) {
            return Some("already enqueued".into());
        }
        None
    }

    pub fn is_enqueued(&self, event_ref: &str) -> bool {
        self.state
            .candidates
            .values()
            .any(|c| c.event.event_ref == event_ref)
    }

    /// Samples `events` into the queue. Ineligible events are rejected
    /// before sampling so the sampler only sees admissible ones.
    pub fn enqueue(
        &mut self,
        events: &[ChangeEvent],
        stratum: Stratum,
        sampler: Sampler,
    ) -> Result<EnqueueOutcome, AnnotationError> {
        let mut outcome = EnqueueOutcome::default();
        let mut eligible: Vec<&ChangeEvent> = Vec::new();
        let mut seen = BTreeSet::new();
        for e in events {
            if let Some(reason) = self.gate(e, stratum) {
                outcome.rejected.push(Rejection {
                    event_ref: e.event_ref.clone(),
                    reason,
                });
            } else if seen.insert(e.event_ref.as_str()) {
                eligible.push(e);
            }
        }
        eligible.sort_by(|a, b| a.event_ref.cmp(&b.event_ref));
        let chosen: Vec<&ChangeEvent> = match sampler {
            Sampler::TopKFollowers { k } => {
                eligible.sort_by(|a, b| {
                    b.prev
                        .followers_count
                        .cmp(&a.prev.followers_count)
                        .then_with(|| a.event_ref.cmp(&b.event_ref))
                });
                eligible.into_iter().take(k).collect()
            }
            Sampler::Uniform { n, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx = sample(&mut rng, eligible.len(), n.min(eligible.len())).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| eligible[i]).collect()
            }
        };
        outcome.enqueued = self.insert_candidates(chosen.into_iter(), stratum);
        self.persist()?;
        Ok(outcome)
    }

    fn insert_candidates<'a>(
        &mut self,
        events: impl Iterator<Item = &'a ChangeEvent>,
        stratum: Stratum,
    ) -> Vec<String> {
        let mut ids = Vec::new();
        for e in events {
            let id = format!("c{:06}", self.state.next_id);
            self.state.next_id += 1;
            self.state.candidates.insert(
                id.clone(),
                Candidate {
                    candidate_id: id.clone(),
                    event: CandidateEvent::from_event(e),
                    sampling_stratum: stratum,
                    status: CandidateStatus::Pending,
                },
            );
            ids.push(id);
        }
        ids
    }

    pub fn candidate(&self, candidate_id: &str) -> Result<&Candidate, AnnotationError> {
        self.state
            .candidates
            .get(candidate_id)
            .ok_or_else(|| AnnotationError::UnknownCandidate(candidate_id.to_string()))
    }

    pub fn labels_for(&self, candidate_id: &str) -> Vec<&LabelRecord> {
        self.state
            .labels
            .get(candidate_id)
            .map(|m| m.values().collect())
            .unwrap_or_default()
    }

    /// Next pending candidate this annotator has not labeled, ordered by
    /// stratum then candidate id.
    pub fn next_candidate(&self, annotator_id: &str) -> Result<Option<&Candidate>, AnnotationError> {
        if !self.state.annotators.contains(annotator_id) {
            return Err(AnnotationError::UnknownAnnotator(annotator_id.to_string()));
        }
        Ok(self
            .state
            .candidates
            .values()
            .filter(|c| c.status == CandidateStatus::Pending)
            .filter(|c| {
                !self
                    .state
                    .labels
                    .get(&c.candidate_id)
                    .is_some_and(|m| m.contains_key(annotator_id))
            })
            .min_by(|a, b| {
                a.sampling_stratum
                    .cmp(&b.sampling_stratum)
                    .then_with(|| a.candidate_id.cmp(&b.candidate_id))
            }))
    }

    pub fn submit_label(&mut self, record: LabelRecord) -> Result<(), AnnotationError> {
        if !self.state.annotators.contains(&record.annotator_id) {
            return Err(AnnotationError::UnknownAnnotator(record.annotator_id));
        }
        let status = self.candidate(&record.candidate_id)?.status;
        if status == CandidateStatus::Skipped {
            return Err(AnnotationError::Invalid(format!(
                "candidate {} was skipped",
                record.candidate_id
            )));
        }
        let per = self
            .state
            .labels
            .entry(record.candidate_id.clone())
            .or_default();
        if let Some(old) = per.insert(record.annotator_id.clone(), record.clone()) {
            self.state.audit.push(old);
        }
        let count = per.len();
        if count >= self.state.required_annotators {
            if let Some(c) = self.state.candidates.get_mut(&record.candidate_id) {
                c.status = CandidateStatus::Labeled;
            }
        }
        self.persist()
    }

    pub fn skip(&mut self, candidate_id: &str) -> Result<(), AnnotationError> {
        let c = self
            .state
            .candidates
            .get_mut(candidate_id)
            .ok_or_else(|| AnnotationError::UnknownCandidate(candidate_id.to_string()))?;
        if c.status != CandidateStatus::Pending {
            return Err(AnnotationError::Invalid(format!(
                "candidate {candidate_id} is not pending"
            )));
        }
        c.status = CandidateStatus::Skipped;
        self.persist()
    }

    /// Records the outcome of discussing a conflict.
    pub fn adjudicate(&mut self, candidate_id: &str, label: Label) -> Result<(), AnnotationError> {
        self.candidate(candidate_id)?;
        if self.labels_for(candidate_id).is_empty() {
            return Err(AnnotationError::Invalid(format!(
                "candidate {candidate_id} has no labels to adjudicate"
            )));
        }
        self.state
            .adjudications
            .insert(candidate_id.to_string(), label);
        self.persist()
    }

    pub fn final_decision(&self, candidate_id: &str) -> Option<FinalDecision> {
        let decision = |resolution, method| FinalDecision {
            candidate_id: candidate_id.to_string(),
            resolution,
            method,
        };
        if let Some(l) = self.state.adjudications.get(candidate_id) {
            return Some(decision((*l).into(), DecisionMethod::Adjudicated));
        }
        let labels = self.labels_for(candidate_id);
        let first = labels.first()?.label;
        if labels.iter().all(|r| r.label == first) {
            Some(decision(first.into(), DecisionMethod::Unanimous))
        } else {
            Some(decision(Resolution::Disagree, DecisionMethod::Unanimous))
        }
    }

    pub fn queue_counts(&self) -> QueueCounts {
        let mut q = QueueCounts::default();
        for c in self.state.candidates.values() {
            q.enqueued += 1;
            match c.status {
                CandidateStatus::Pending => q.pending += 1,
                CandidateStatus::Labeled => q.labeled += 1,
                CandidateStatus::Skipped => q.skipped += 1,
            }
        }
        q
    }

    /// `(event_ref, positive?)` rows for training, sorted by event_ref.
    /// Unsure and disagreeing candidates are left out.
    pub fn training_rows(&self, filter: &ExportFilter) -> Vec<(String, bool)> {
        let mut rows = Vec::new();
        for c in self.state.candidates.values() {
            if filter.resolved_only && c.status != CandidateStatus::Labeled {
                continue;
            }
            let resolution = match &filter.annotator {
                Some(a) => self
                    .state
                    .labels
                    .get(&c.candidate_id)
                    .and_then(|m| m.get(a))
                    .map(|r| Resolution::from(r.label)),
                None => self.final_decision(&c.candidate_id).map(|d| d.resolution),
            };
            match resolution {
                Some(Resolution::Positive) => rows.push((c.event.event_ref.clone(), true)),
                Some(Resolution::Negative) => rows.push((c.event.event_ref.clone(), false)),
                _ => {}
            }
        }
        rows.sort();
        rows
    }

    /// CSV with header `event_ref,label`.
    pub fn export_training_set(&self, filter: &ExportFilter) -> String {
        let mut out = String::from("event_ref,label\n");
        for (event_ref, positive) in self.training_rows(filter) {
            let label = if positive { Label::Positive } else { Label::Negative };
            out.push_str(&csv_field(&event_ref));
            out.push(',');
            out.push_str(label.as_str());
            out.push('\n');
        }
        out
    }

    /// Pairwise Cohen's kappa over shared candidates plus Fleiss' kappa
    /// over all candidates with at least two labels.
    pub fn agreement(&self, mode: UnsureMode) -> AgreementStats {
        let annotators: Vec<&String> = self.state.annotators.iter().collect();
        let mut pairs = Vec::new();
        for (i, a) in annotators.iter().enumerate() {
            for b in &annotators[i + 1..] {
                let (mut la, mut lb) = (Vec::new(), Vec::new());
                for per in self.state.labels.values() {
                    if let (Some(x), Some(y)) = (per.get(*a), per.get(*b)) {
                        la.push(x.label);
                        lb.push(y.label);
                    }
                }
                if la.is_empty() {
                    continue;
                }
                let items = match mode {
                    UnsureMode::IncludeUnsure => la.len(),
                    UnsureMode::ExcludeUnsure => la
                        .iter()
                        .zip(&lb)
                        .filter(|(x, y)| **x != Label::Unsure && **y != Label::Unsure)
                        .count(),
                };
                pairs.push(PairAgreement {
                    annotator_a: (*a).clone(),
                    annotator_b: (*b).clone(),
                    items,
                    kappa: cohen_kappa(&la, &lb, mode).ok(),
                });
            }
        }

        let mut matrix = Vec::new();
        let mut label_counts = BTreeMap::new();
        for per in self.state.labels.values() {
            for r in per.values() {
                *label_counts.entry(r.label.as_str().to_string()).or_default() += 1;
            }
            if per.len() < 2 {
                continue;
            }
            if mode == UnsureMode::ExcludeUnsure && per.values().any(|r| r.label == Label::Unsure) {
                continue;
            }
            let mut row = vec![0usize; Label::ALL.len()];
            for r in per.values() {
                row[r.label as usize] += 1;
            }
            matrix.push(row);
        }
        AgreementStats {
            mode,
            pairs,
            fleiss_items: matrix.len(),
            fleiss_kappa: if matrix.is_empty() { None } else { fleiss_kappa(&matrix).ok() },
            label_counts,
        }
    }

    pub(crate) fn enqueue_ranked(
        &mut self,
        events: &[&ChangeEvent],
        stratum: Stratum,
    ) -> Result<Vec<String>, AnnotationError> {
        let ids = self.insert_candidates(events.iter().copied(), stratum);
        self.persist()?;
        Ok(ids)
    }

    pub(crate) fn push_lineage(&mut self, entry: LineageEntry) -> Result<(), AnnotationError> {
        self.state.lineage.push(entry);
        self.persist()
    }

    /// Screens the persisted queue for popular-stratum candidates below the
    /// follower gate. Returns offending candidate ids.
    pub fn gate_violations(&self) -> Vec<String> {
        self.state
            .candidates
            .values()
            .filter(|c| {
                c.sampling_stratum.is_popular()
                    && c.event.prev.followers_count < self.state.popular_min_followers
            })
            .map(|c| c.candidate_id.clone())
            .collect()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
