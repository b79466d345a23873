//! Detection of misleading account repurposing from archived tweet streams.
//!
//! The crate is organised as a pipeline:
//!
//! - [`ingest`] stream-parses line-delimited tweet archives into profile
//!   snapshots and tweet observations.
//! - [`store`] persists per-user snapshot timelines and extracts
//!   screen-name [`ChangeEvent`]s.
//! - [`features`] computes the edit-distance, similarity, metadata and style
//!   feature families for an event.
//! - [`classifier`] holds the depth-two baseline rule, a random forest,
//!   evaluation metrics and model files.
//! - [`stats`] reproduces the statistical characterization of repurposed
//!   versus non-repurposed events.
//! - [`annotation`] is the labeling queue, agreement statistics, active
//!   learning loop and its HTTP API.
//! - [`pipeline`] chains the stages together for the command-line tool.

pub mod annotation;
pub mod classifier;
pub mod config;
pub mod features;
pub mod fixture;
pub mod ingest;
pub mod pipeline;
pub mod stats;
pub mod store;

pub use classifier::{EvalReport, ModelArtifact};
pub use features::{Family, FeatureVector};
pub use store::{ChangeEvent, ProfileSnapshot, SnapshotStore, TweetObservation};
