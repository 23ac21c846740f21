//! Candidate scoring: normalized cooccurrence counts, context cosine
//! similarity, and their weighted mix.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{CandidateSet, MappingDataset};

pub const DEFAULT_LAMBDA: f64 = 0.7;
pub const DEFAULT_K: usize = 5;
pub const BASELINE_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Count,
    Mixed,
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(Criterion::Count),
            "mixed" => Ok(Criterion::Mixed),
            other => Err(Error::InvalidArgument(format!(
                "unknown criterion {other:?} (expected count or mixed)"
            ))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Count => "count",
            Criterion::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    pub criterion: Criterion,
    pub lambda: f64,
    pub k: usize,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            criterion: Criterion::Count,
            lambda: DEFAULT_LAMBDA,
            k: DEFAULT_K,
        }
    }
}

impl RankingConfig {
    pub fn new(criterion: Criterion, lambda: f64, k: usize) -> Result<Self> {
        let cfg = RankingConfig { criterion, lambda, k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub paper_id: String,
    /// Raw cooccurrence count n_l.
    pub count: u64,
    pub w_count: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_context: Option<f64>,
    pub r: f64,
}

/// Text to vector provider. Identical text must give identical vectors.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier used to key memoized embeddings.
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased alphanumeric tokens hashed into `dim` buckets with weight 1,
/// then L2-normalized. No tokens gives the zero vector.
pub fn baseline_embed(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let lower = text.to_lowercase();
    for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        v[(fnv1a(tok.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dim: usize,
    id: String,
}

impl HashedEmbedder {
    pub fn new(dim: usize) -> Self {
        HashedEmbedder {
            dim,
            id: format!("hashed-bow-{dim}"),
        }
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self::new(BASELINE_DIM)
    }
}

impl EmbeddingProvider for HashedEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(baseline_embed(text, self.dim))
    }
}

/// Cosine similarity, clamped to [-1, 1]; 0 if either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 || a.len() != b.len() {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Title and abstract joined by one space; title alone without abstract.
pub fn candidate_text(title: &str, abstract_text: &str) -> String {
    if abstract_text.is_empty() {
        title.to_string()
    } else {
        format!("{title} {abstract_text}")
    }
}

pub fn context_score(
    query_sentence: &str,
    candidate_title: &str,
    candidate_abstract: &str,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64> {
    let q = embedder.embed(query_sentence)?;
    let c = embedder.embed(&candidate_text(candidate_title, candidate_abstract))?;
    Ok(cosine(&q, &c))
}

/// n_l / SC for every candidate, in the set's order.
pub fn count_score(candidates: &CandidateSet) -> Vec<(String, f64)> {
    let sc = candidates.total() as f64;
    assert!(sc > 0.0, "candidate set with zero total count");
    candidates
        .candidates()
        .iter()
        .map(|(p, n)| (p.clone(), *n as f64 / sc))
        .collect()
}

pub fn mixed_score(w_count: f64, w_context: f64, lambda: f64) -> f64 {
    lambda * w_count + (1.0 - lambda) * w_context
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperMetadata {
    pub paper_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(rename = "abstract", default)]
    pub abstract_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
}

/// Paper id to title/abstract/year lookup, loaded from the metadata sidecar.
#[derive(Debug, Clone, Default)]
pub struct MetadataStore {
    papers: HashMap<String, PaperMetadata>,
}

impl MetadataStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, meta: PaperMetadata) {
        self.papers.insert(meta.paper_id.clone(), meta);
    }

    pub fn get(&self, paper_id: &str) -> Option<&PaperMetadata> {
        self.papers.get(paper_id)
    }

    /// Entries sorted by paper id.
    pub fn iter(&self) -> impl Iterator<Item = &PaperMetadata> {
        let mut v: Vec<_> = self.papers.values().collect();
        v.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
        v.into_iter()
    }

    pub fn title(&self, paper_id: &str) -> &str {
        self.get(paper_id).map_or("", |m| m.title.as_str())
    }

    pub fn len(&self) -> usize {
        self.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.papers.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut store = MetadataStore::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let meta: PaperMetadata = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            store.insert(meta);
        }
        Ok(store)
    }
}

impl FromIterator<PaperMetadata> for MetadataStore {
    fn from_iter<I: IntoIterator<Item = PaperMetadata>>(iter: I) -> Self {
        let mut s = MetadataStore::new();
        iter.into_iter().for_each(|m| s.insert(m));
        s
    }
}

/// Context scoring against candidate papers with memoized candidate
/// embeddings. Safe to share across threads.
pub struct ContextScorer<'a> {
    embedder: &'a dyn EmbeddingProvider,
    metadata: &'a MetadataStore,
    cache: Mutex<HashMap<String, Arc<Vec<f64>>>>,
}

impl<'a> ContextScorer<'a> {
    pub fn new(embedder: &'a dyn EmbeddingProvider, metadata: &'a MetadataStore) -> Self {
        ContextScorer {
            embedder,
            metadata,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn embedder(&self) -> &dyn EmbeddingProvider {
        self.embedder
    }

    pub fn metadata(&self) -> &MetadataStore {
        self.metadata
    }

    fn candidate_vector(&self, paper_id: &str) -> Result<Arc<Vec<f64>>> {
        if let Some(v) = self.cache.lock().unwrap().get(paper_id) {
            return Ok(Arc::clone(v));
        }
        let text = self
            .metadata
            .get(paper_id)
            .map(|m| candidate_text(&m.title, &m.abstract_text))
            .unwrap_or_default();
        let v = Arc::new(self.embedder.embed(&text)?);
        self.cache
            .lock()
            .unwrap()
            .entry(paper_id.to_string())
            .or_insert_with(|| Arc::clone(&v));
        Ok(v)
    }

    /// w_context for every paper id, in order.
    pub fn scores(&self, sentence: &str, paper_ids: &[&str]) -> Result<Vec<f64>> {
        let q = self.embedder.embed(sentence)?;
        paper_ids
            .iter()
            .map(|p| Ok(cosine(&q, &self.candidate_vector(p)?)))
            .collect()
    }
}

/// Orders `entity`'s candidates by descending r, then descending count,
/// then ascending paper id, and keeps the top `cfg.k`.
///
/// The scorer is only consulted under [`Criterion::Mixed`], where it is
/// required.
pub fn rank_candidates(
    entity: &str,
    sentence: &str,
    ds: &MappingDataset,
    cfg: &RankingConfig,
    scorer: Option<&ContextScorer<'_>>,
) -> Result<Vec<ScoredCandidate>> {
    cfg.validate()?;
    let set = ds.get(entity).ok_or_else(|| Error::NotInDataset(entity.to_string()))?;
    let w_count = count_score(set);
    let context = match cfg.criterion {
        Criterion::Count => None,
        Criterion::Mixed => {
            let scorer =
                scorer.ok_or_else(|| Error::InvalidArgument("mixed criterion needs an embedding provider".into()))?;
            let ids: Vec<&str> = w_count.iter().map(|(p, _)| p.as_str()).collect();
            Some(scorer.scores(sentence, &ids)?)
        }
    };

    let mut scored: Vec<ScoredCandidate> = w_count
        .into_iter()
        .zip(set.candidates())
        .enumerate()
        .map(|(i, ((paper_id, wc), (_, n)))| {
            let wx = context.as_ref().map(|c| c[i]);
            ScoredCandidate {
                paper_id,
                count: *n,
                w_count: wc,
                w_context: wx,
                r: wx.map_or(wc, |x| mixed_score(wc, x, cfg.lambda)),
            }
        })
        .collect();
    scored.sort_by(|a, b| {
        b.r.total_cmp(&a.r)
            .then_with(|| b.count.cmp(&a.count))
            .then_with(|| a.paper_id.cmp(&b.paper_id))
    });
    scored.truncate(cfg.k);
    Ok(scored)
}
