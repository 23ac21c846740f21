//! Rank metrics against gold source papers.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::MappingDataset;
use crate::par::{self, Execution};
use crate::ranking::{rank_candidates, ContextScorer, RankingConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub entity: String,
    pub gold_id: String,
    pub sentence: String,
}

pub fn load_gold(path: impl AsRef<Path>) -> Result<Vec<GoldLabel>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GoldLabel = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if g.gold_id.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "empty gold_id".into(),
            });
        }
        out.push(g);
    }
    Ok(out)
}

/// One query: the system's ranked paper ids and the single gold id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedQuery {
    pub ranked: Vec<String>,
    pub gold: String,
}

impl RankedQuery {
    /// 1-based rank of the gold paper, if retrieved.
    pub fn gold_rank(&self) -> Option<usize> {
        self.ranked.iter().position(|p| *p == self.gold).map(|i| i + 1)
    }
}

fn ensure_non_empty(queries: &[RankedQuery]) -> Result<()> {
    if queries.is_empty() {
        Err(Error::EmptyInput("ranking queries"))
    } else {
        Ok(())
    }
}

/// Fraction of queries with the gold paper in the top `k`.
pub fn recall_at_k(queries: &[RankedQuery], k: usize) -> Result<f64> {
    ensure_non_empty(queries)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let hits = queries.iter().filter(|q| q.gold_rank().is_some_and(|r| r <= k)).count();
    Ok(hits as f64 / queries.len() as f64)
}

/// Sums in ascending order so the result does not depend on query order.
fn stable_mean(mut values: Vec<f64>) -> f64 {
    let n = values.len() as f64;
    values.sort_by(f64::total_cmp);
    values.into_iter().sum::<f64>() / n
}

/// Mean of 1/rank of the gold paper (0 when missing).
pub fn mrr(queries: &[RankedQuery]) -> Result<f64> {
    ensure_non_empty(queries)?;
    Ok(stable_mean(
        queries
            .iter()
            .map(|q| q.gold_rank().map_or(0.0, |r| 1.0 / r as f64))
            .collect(),
    ))
}

/// Mean average precision with the gold paper as the only relevant item.
pub fn map(queries: &[RankedQuery]) -> Result<f64> {
    ensure_non_empty(queries)?;
    let ap = |q: &RankedQuery| {
        let relevant = 1.0;
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (i, p) in q.ranked.iter().enumerate() {
            if *p == q.gold && hits == 0 {
                hits += 1;
                sum += hits as f64 / (i + 1) as f64;
            }
        }
        sum / relevant
    };
    Ok(stable_mean(queries.iter().map(ap).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "recall@1")]
    pub recall_at_1: f64,
    #[serde(rename = "recall@5")]
    pub recall_at_5: f64,
    #[serde(rename = "recall@10")]
    pub recall_at_10: f64,
    pub mrr: f64,
    pub map: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_queries(queries: &[RankedQuery]) -> Result<Self> {
        Ok(MetricsReport {
            recall_at_1: recall_at_k(queries, 1)?,
            recall_at_5: recall_at_k(queries, 5)?,
            recall_at_10: recall_at_k(queries, 10)?,
            mrr: mrr(queries)?,
            map: map(queries)?,
            n: queries.len(),
        })
    }
}

/// Ranks every gold query in its context sentence and scores the full
/// ranked lists. Entities absent from the dataset count as misses.
pub fn evaluate(
    ds: &MappingDataset,
    cfg: &RankingConfig,
    scorer: Option<&ContextScorer<'_>>,
    gold: &[GoldLabel],
    exec: Execution,
) -> Result<MetricsReport> {
    if gold.is_empty() {
        return Err(Error::EmptyInput("gold labels"));
    }
    let full = RankingConfig { k: usize::MAX, ..*cfg };
    full.validate()?;
    let queries: Vec<Result<RankedQuery>> = par::map(exec, gold, |g| {
        let ranked = if ds.contains(&g.entity) {
            rank_candidates(&g.entity, &g.sentence, ds, &full, scorer)?
                .into_iter()
                .map(|c| c.paper_id)
                .collect()
        } else {
            Vec::new()
        };
        Ok(RankedQuery {
            ranked,
            gold: g.gold_id.clone(),
        })
    });
    let queries = queries.into_iter().collect::<Result<Vec<_>>>()?;
    MetricsReport::from_queries(&queries)
}
