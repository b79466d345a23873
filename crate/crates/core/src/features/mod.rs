//! Feature families computed for a [`ChangeEvent`].
//!
//! Feature names and their order are fixed:
//!
//! | family | features |
//! |--------|----------|
//! | EDT  | `nld_name`, `nld_description`, `nld_screen_name` |
//! | DSIM | `lcs_length`, `lcs_normalized`, `common_tokens`, `jaccard_tokens`, `semantic_similarity` |
//! | MD   | for each of `followers`, `friends`, `statuses`, `favourites`: `<c>_prev`, `<c>_next`, `<c>_diff`, `<c>_ratio`; then `location_changed`, `nld_location`, `url_changed`, `nld_url`, `profile_language_changed`, `profile_image_changed`, `dormancy_seconds`, `dormancy_days` |
//! | STY  | `sty_available`, `sty_cosine`, `sty_euclidean`, and with [`StyleMode::WithFused`] `sty_fused_000` .. |
//!
//! Families always appear in the order EDT, DSIM, MD, STY.

pub mod embedding;
pub mod hash;
pub mod style;
pub mod text;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{ChangeEvent, ProfileSnapshot};
use embedding::{cosine, EmbeddingProvider};
pub use text::{longest_common_substring, nld, token_overlap, CommonSubstring, TokenOverlap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("event {0}: no tweets on one side of the change")]
    StyleUnavailable(String),
    #[error("feature {0} is not finite")]
    NonFinite(String),
    #[error("unknown feature family {0:?}")]
    UnknownFamily(String),
    #[error("feature file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "EDT")]
    Edt,
    #[serde(rename = "DSIM")]
    Dsim,
    #[serde(rename = "MD")]
    Md,
    #[serde(rename = "STY")]
    Sty,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Edt, Family::Dsim, Family::Md, Family::Sty];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Edt => "EDT",
            Family::Dsim => "DSIM",
            Family::Md => "MD",
            Family::Sty => "STY",
        }
    }

    /// Parses a model name such as `EDT-DSIM-MD` into its families.
    pub fn parse_list(s: &str) -> Result<Vec<Family>, FeatureError> {
        let mut out: Vec<Family> = s
            .split(['-', ',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "EDT" => Ok(Family::Edt),
            "DSIM" => Ok(Family::Dsim),
            "MD" => Ok(Family::Md),
            "STY" => Ok(Family::Sty),
            _ => Err(FeatureError::UnknownFamily(s.to_string())),
        }
    }
}

pub const EDT_FEATURES: [&str; 3] = ["nld_name", "nld_description", "nld_screen_name"];
pub const DSIM_FEATURES: [&str; 5] = [
    "lcs_length",
    "lcs_normalized",
    "common_tokens",
    "jaccard_tokens",
    "semantic_similarity",
];
const COUNTERS: [&str; 4] = ["followers", "friends", "statuses", "favourites"];
const STY_FEATURES: [&str; 3] = ["sty_available", "sty_cosine", "sty_euclidean"];

/// Whether the style family also carries the averaged before/after vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleMode {
    #[default]
    Distances,
    WithFused,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub families: Vec<Family>,
    #[serde(default)]
    pub style: StyleMode,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            style: StyleMode::Distances,
        }
    }
}

impl FeatureConfig {
    pub fn new(families: &[Family]) -> Self {
        let mut families = families.to_vec();
        families.sort();
        families.dedup();
        Self {
            families,
            style: StyleMode::Distances,
        }
    }
}

/// Named features of one change event, in the documented order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub event_ref: String,
    pub values: IndexMap<String, f64>,
    pub families: Vec<Family>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Values in the order of `names`; `None` names the first missing feature.
    pub fn project(&self, names: &[String]) -> Result<Vec<f64>, String> {
        names
            .iter()
            .map(|n| self.get(n).ok_or_else(|| n.clone()))
            .collect()
    }
}

/// Text compared by the DSIM family: name, screen name and description.
pub fn combined_profile_text(s: &ProfileSnapshot) -> String {
    format!("{}\n{}\n{}", s.name, s.screen_name, s.description)
}

pub fn edt_features(event: &ChangeEvent) -> [(&'static str, f64); 3] {
    [
        ("nld_name", nld(&event.prev.name, &event.next.name)),
        (
            "nld_description",
            nld(&event.prev.description, &event.next.description),
        ),
        (
            "nld_screen_name",
            nld(&event.prev.screen_name, &event.next.screen_name),
        ),
    ]
}

/// Cosine similarity of the provider's embeddings; 0 when either is zero.
pub fn semantic_similarity(
    a: &str,
    b: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, FeatureError> {
    let va = provider.embed(a)?;
    let vb = provider.embed(b)?;
    Ok(cosine(&va, &vb))
}

pub fn dsim_features(
    event: &ChangeEvent,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<(&'static str, f64)>, FeatureError> {
    let a = combined_profile_text(&event.prev);
    let b = combined_profile_text(&event.next);
    let lcs = longest_common_substring(&a, &b);
    let overlap = token_overlap(&a, &b);
    Ok(vec![
        ("lcs_length", lcs.length as f64),
        ("lcs_normalized", lcs.normalized),
        ("common_tokens", overlap.common_count as f64),
        ("jaccard_tokens", overlap.jaccard),
        ("semantic_similarity", semantic_similarity(&a, &b, provider)?),
    ])
}

/// `(prev - next) / max(prev, next)`, 0 when both are 0.
pub fn change_ratio(prev: u64, next: u64) -> f64 {
    let max = prev.max(next);
    if max == 0 {
        0.0
    } else {
        (prev as f64 - next as f64) / max as f64
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn md_features(event: &ChangeEvent) -> Vec<(String, f64)> {
    let (p, n) = (&event.prev, &event.next);
    let counters = [
        (p.followers_count, n.followers_count),
        (p.friends_count, n.friends_count),
        (p.statuses_count, n.statuses_count),
        (p.favourites_count, n.favourites_count),
    ];
    let mut out = Vec::with_capacity(24);
    for (name, (a, b)) in COUNTERS.iter().zip(counters) {
        out.push((format!("{name}_prev"), a as f64));
        out.push((format!("{name}_next"), b as f64));
        out.push((format!("{name}_diff"), a as f64 - b as f64));
        out.push((format!("{name}_ratio"), change_ratio(a, b)));
    }
    let image_changed = match (&p.profile_image_url, &n.profile_image_url) {
        (Some(a), Some(b)) => a != b,
        _ => false,
    };
    out.extend([
        ("location_changed".to_string(), flag(p.location != n.location)),
        ("nld_location".to_string(), nld(&p.location, &n.location)),
        ("url_changed".to_string(), flag(p.url != n.url)),
        ("nld_url".to_string(), nld(&p.url, &n.url)),
        (
            "profile_language_changed".to_string(),
            flag(p.profile_language != n.profile_language),
        ),
        ("profile_image_changed".to_string(), flag(image_changed)),
        ("dormancy_seconds".to_string(), event.dormancy as f64),
        ("dormancy_days".to_string(), event.dormancy_days()),
    ]);
    out
}

fn sty_features(
    event: &ChangeEvent,
    provider: &dyn EmbeddingProvider,
    mode: StyleMode,
) -> Result<Vec<(String, f64)>, FeatureError> {
    let dim = provider.dimension();
    let (available, cos, dist, fused) = match style::style_vectors(event, provider) {
        Ok(v) => (1.0, v.cosine, v.euclidean, v.fused()),
        Err(FeatureError::StyleUnavailable(_)) => (0.0, 0.0, 0.0, vec![0.0; dim]),
        Err(e) => return Err(e),
    };
    let mut out: Vec<(String, f64)> = STY_FEATURES
        .iter()
        .map(|s| s.to_string())
        .zip([available, cos, dist])
        .collect();
    if mode == StyleMode::WithFused {
        out.extend(
            fused
                .into_iter()
                .enumerate()
                .map(|(i, x)| (format!("sty_fused_{i:03}"), x)),
        );
    }
    Ok(out)
}

/// Builds the feature vector for `event` with the requested families.
pub fn assemble(
    event: &ChangeEvent,
    config: &FeatureConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<FeatureVector, FeatureError> {
    let mut families = config.families.clone();
    families.sort();
    families.dedup();

    let mut values = IndexMap::new();
    for family in &families {
        match family {
            Family::Edt => values.extend(edt_features(event).map(|(k, v)| (k.to_string(), v))),
            Family::Dsim => values.extend(
                dsim_features(event, provider)?
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), v)),
            ),
            Family::Md => values.extend(md_features(event)),
            Family::Sty => values.extend(sty_features(event, provider, config.style)?),
        }
    }
    if let Some((name, _)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(FeatureError::NonFinite(format!("{}/{name}", event.event_ref)));
    }
    Ok(FeatureVector {
        event_ref: event.event_ref.clone(),
        values,
        families,
    })
}

/// Family a feature name belongs to, if any.
pub fn family_of(name: &str) -> Option<Family> {
    if EDT_FEATURES.contains(&name) {
        Some(Family::Edt)
    } else if DSIM_FEATURES.contains(&name) {
        Some(Family::Dsim)
    } else if name.starts_with("sty_") {
        Some(Family::Sty)
    } else if COUNTERS.iter().any(|c| name.starts_with(c))
        || name.ends_with("_changed")
        || name.starts_with("nld_")
        || name.starts_with("dormancy_")
    {
        Some(Family::Md)
    } else {
        None
    }
}

/// Writes vectors as CSV with an `event_ref` column followed by one column
/// per feature. All vectors must share the first vector's feature order.
pub fn write_feature_csv<W: Write>(w: W, vectors: &[FeatureVector]) -> Result<(), FeatureError> {
    let mut out = csv::Writer::from_writer(w);
    let names: Vec<&str> = vectors.first().map(|v| v.names().collect()).unwrap_or_default();
    let io = |e: csv::Error| FeatureError::Io(e.to_string());
    let mut header = vec!["event_ref"];
    header.extend(&names);
    out.write_record(&header).map_err(io)?;
    for v in vectors {
        if !v.names().eq(names.iter().copied()) {
            return Err(FeatureError::Io(format!(
                "{}: feature order differs from the first vector",
                v.event_ref
            )));
        }
        let mut row = vec![v.event_ref.clone()];
        row.extend(v.values.values().map(|x| x.to_string()));
        out.write_record(&row).map_err(io)?;
    }
    out.flush().map_err(|e| FeatureError::Io(e.to_string()))
}

pub fn read_feature_csv<R: Read>(r: R) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| FeatureError::Io(e.to_string()))?
        .clone();
    if headers.get(0) != Some("event_ref") {
        return Err(FeatureError::Io("first column must be event_ref".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut families: Vec<Family> = names.iter().filter_map(|n| family_of(n)).collect();
    families.sort();
    families.dedup();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| FeatureError::Io(e.to_string()))?;
        let mut values = IndexMap::with_capacity(names.len());
        for (name, field) in names.iter().zip(rec.iter().skip(1)) {
            let x: f64 = field
                .parse()
                .map_err(|_| FeatureError::Io(format!("{name}: bad number {field:?}")))?;
            if !x.is_finite() {
                return Err(FeatureError::NonFinite(name.clone()));
            }
            values.insert(name.clone(), x);
        }
        out.push(FeatureVector {
            event_ref: rec.get(0).unwrap_or_default().to_string(),
            values,
            families: families.clone(),
        });
    }
    Ok(out)
}
