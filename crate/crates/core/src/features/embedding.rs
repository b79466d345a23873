//! Text embedding providers.
//!
//! The default provider hashes character trigrams into a fixed-size count
//! vector. An external model can be plugged in through a batch file
//! exchange: texts are written as `{"id": .., "text": ..}` lines, the model
//! answers with `{"id": .., "vector": [..]}` lines.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hash::fnv1a64;
use super::FeatureError;

pub const DEFAULT_DIMENSION: usize = 512;
pub const DEFAULT_HASH_SEED: u64 = 0x5eed_2022;

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    /// Deterministic; returns the zero vector only for empty text.
    fn embed(&self, text: &str) -> Result<Vec<f64>, FeatureError>;
}

/// Hashed character-trigram frequency vectors over lowercased text padded
/// with start/end markers, so every non-empty text has at least one gram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedNgramEmbedding {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for HashedNgramEmbedding {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            seed: DEFAULT_HASH_SEED,
        }
    }
}

impl EmbeddingProvider for HashedNgramEmbedding {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, FeatureError> {
        let mut v = vec![0.0; self.dimension];
        if text.is_empty() {
            return Ok(v);
        }
        let mut chars = vec!['\u{2}'];
        chars.extend(text.chars().flat_map(char::to_lowercase));
        chars.push('\u{3}');
        let mut buf = [0u8; 12];
        for gram in chars.windows(3) {
            let mut len = 0;
            for c in gram {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let slot = fnv1a64(self.seed, &buf[..len]) % self.dimension as u64;
            v[slot as usize] += 1.0;
        }
        Ok(v)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub id: usize,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub id: usize,
    pub vector: Vec<f64>,
}

/// Writes the distinct non-empty texts as a request file; ids follow the
/// sorted text order.
pub fn write_embedding_requests<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    path: &Path,
) -> Result<usize, FeatureError> {
    let distinct: BTreeSet<&str> = texts.into_iter().filter(|t| !t.is_empty()).collect();
    let mut w = BufWriter::new(File::create(path).map_err(|e| FeatureError::Io(e.to_string()))?);
    for (id, text) in distinct.iter().enumerate() {
        let line = serde_json::to_string(&EmbeddingRequest {
            id,
            text: text.to_string(),
        })
        .map_err(|e| FeatureError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| FeatureError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| FeatureError::Io(e.to_string()))?;
    Ok(distinct.len())
}

/// Provider backed by a completed request/response file exchange. The
/// dimension is taken from the responses and must be uniform.
#[derive(Debug, Clone)]
pub struct BatchFileEmbedding {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl BatchFileEmbedding {
    pub fn load(requests: &Path, responses: &Path) -> Result<Self, FeatureError> {
        let mut texts: HashMap<usize, String> = HashMap::new();
        for line in read_lines(requests)? {
            let r: EmbeddingRequest =
                serde_json::from_str(&line).map_err(|e| FeatureError::Provider(e.to_string()))?;
            texts.insert(r.id, r.text);
        }
        let mut vectors = HashMap::new();
        let mut dimension = None;
        for line in read_lines(responses)? {
            let r: EmbeddingResponse =
                serde_json::from_str(&line).map_err(|e| FeatureError::Provider(e.to_string()))?;
            match dimension {
                None => dimension = Some(r.vector.len()),
                Some(d) if d != r.vector.len() => {
                    return Err(FeatureError::Provider(format!(
                        "response {} has dimension {}, expected {d}",
                        r.id,
                        r.vector.len()
                    )))
                }
                _ => {}
            }
            if r.vector.iter().any(|x| !x.is_finite()) {
                return Err(FeatureError::Provider(format!("response {} is not finite", r.id)));
            }
            let text = texts
                .get(&r.id)
                .ok_or_else(|| FeatureError::Provider(format!("response for unknown id {}", r.id)))?;
            vectors.insert(text.clone(), r.vector);
        }
        let dimension = dimension
            .filter(|d| *d > 0)
            .ok_or_else(|| FeatureError::Provider("no embedding responses".into()))?;
        Ok(Self { dimension, vectors })
    }
}

impl EmbeddingProvider for BatchFileEmbedding {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, FeatureError> {
        if text.is_empty() {
            return Ok(vec![0.0; self.dimension]);
        }
        self.vectors
            .get(text)
            .cloned()
            .ok_or_else(|| FeatureError::Provider(format!("no vector for text {text:?}")))
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, FeatureError> {
    let f = File::open(path).map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))?;
    BufReader::new(f)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .collect::<Result<_, _>>()
        .map_err(|e| FeatureError::Io(e.to_string()))
}
