//! Document-level recommendation: detect entities, keep the ones present in
//! the mapping dataset, and rank their candidate source papers in context.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::QueryDocument;
use crate::error::Result;
use crate::extract::{extract_entities, DocumentContext, EntityExtractor, EntityMention};
use crate::index::MappingDataset;
use crate::par::{self, Execution};
use crate::ranking::{rank_candidates, ContextScorer, RankingConfig, ScoredCandidate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub entity: String,
    pub sentence_index: usize,
    pub candidates: Vec<ScoredCandidate>,
}

/// Extracted mentions for every sentence of `doc`, in sentence order.
pub fn document_mentions(
    doc: &QueryDocument,
    extractor: &dyn EntityExtractor,
    exec: Execution,
) -> Vec<Vec<EntityMention>> {
    let ctx = DocumentContext::from_sentences(&doc.sentences);
    par::map(exec, &doc.sentences, |s| extract_entities(s, extractor, &ctx))
}

/// Ranks candidates for every in-dataset entity occurrence of `doc`.
///
/// Occurrences of one entity whose ranked paper lists are identical are
/// collapsed to the first; a different order in another sentence is
/// reported separately.
pub fn recommend(
    doc: &QueryDocument,
    ds: &MappingDataset,
    cfg: &RankingConfig,
    extractor: &dyn EntityExtractor,
    scorer: Option<&ContextScorer<'_>>,
    exec: Execution,
) -> Result<Vec<Recommendation>> {
    cfg.validate()?;
    let mentions = document_mentions(doc, extractor, exec);
    let per_sentence = par::map_range(exec, doc.sentences.len(), |i| -> Result<Vec<Recommendation>> {
        let sentence = &doc.sentences[i];
        mentions[i]
            .iter()
            .filter(|m| ds.contains(&m.canonical))
            .map(|m| {
                Ok(Recommendation {
                    entity: m.canonical.clone(),
                    sentence_index: sentence.index,
                    candidates: rank_candidates(&m.canonical, &sentence.text, ds, cfg, scorer)?,
                })
            })
            .collect()
    });

    let mut seen: HashSet<(String, Vec<String>)> = HashSet::new();
    let mut out = Vec::new();
    for recs in per_sentence {
        for rec in recs? {
            let key = (
                rec.entity.clone(),
                rec.candidates.iter().map(|c| c.paper_id.clone()).collect(),
            );
            if seen.insert(key) {
                out.push(rec);
            }
        }
    }
    Ok(out)
}
