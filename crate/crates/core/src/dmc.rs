//! Missing-citation detection.
//!
//! For each published entity in a document the top recommended source
//! paper is compared against the document's reference list. Papers that
//! are absent become potential findings, which a [`ReferenceResolver`] can
//! then confirm against a second reference source.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{QueryDocument, ReferenceEntry};
use crate::error::{Error, Result};
use crate::extract::{merge_aliases, EntityExtractor};
use crate::index::MappingDataset;
use crate::par::Execution;
use crate::ranking::{rank_candidates, ContextScorer, Criterion, MetadataStore, RankingConfig, ScoredCandidate};
use crate::recommend::document_mentions;

/// Lowercases, turns punctuation into spaces and collapses whitespace.
pub fn normalize_title(title: &str) -> String {
    title
        .to_lowercase()
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// The document's REF set: resolved ids plus normalized raw titles.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReferenceSet {
    pub ids: HashSet<String>,
    pub normalized_titles: HashSet<String>,
}

impl ReferenceSet {
    pub fn from_entries(entries: &[ReferenceEntry]) -> Self {
        let mut set = ReferenceSet::default();
        for e in entries {
            if !e.ref_paper_id.is_empty() {
                set.ids.insert(e.ref_paper_id.clone());
            }
            let t = normalize_title(&e.raw_title);
            if !t.is_empty() {
                set.normalized_titles.insert(t);
            }
        }
        set
    }
}

/// True iff the candidate's id is referenced, or its normalized title
/// equals a normalized reference title.
pub fn match_reference(paper_id: &str, title: &str, refset: &ReferenceSet) -> bool {
    if !paper_id.is_empty() && refset.ids.contains(paper_id) {
        return true;
    }
    let t = normalize_title(title);
    !t.is_empty() && refset.normalized_titles.contains(&t)
}

/// The three-branch detection function. Returns the top-1 candidate when
/// the entity is in the dataset and that candidate is not referenced.
pub fn dmc(
    entity: &str,
    sentence: &str,
    ds: &MappingDataset,
    refset: &ReferenceSet,
    cfg: &RankingConfig,
    scorer: Option<&ContextScorer<'_>>,
    metadata: &MetadataStore,
) -> Result<Option<ScoredCandidate>> {
    if !ds.contains(entity) {
        return Ok(None);
    }
    let top1 = RankingConfig { k: 1, ..*cfg };
    let top = rank_candidates(entity, sentence, ds, &top1, scorer)?
        .into_iter()
        .next()
        .expect("dataset entities have at least one candidate");
    if match_reference(&top.paper_id, metadata.title(&top.paper_id), refset) {
        Ok(None)
    } else {
        Ok(Some(top))
    }
}

/// Second source of reference lists, keyed by document id.
pub trait ReferenceResolver: Send + Sync {
    /// `Ok(None)` when the document is unknown to the resolver; `Err` when
    /// the resolver cannot be reached at all.
    fn references(&self, doc_id: &str) -> Result<Option<Vec<String>>>;
}

#[derive(Debug, Clone, Deserialize, Serialize)]
struct ResolverLine {
    paper_id: String,
    #[serde(default)]
    references: Vec<String>,
}

/// Resolver backed by a JSONL fixture of `{paper_id, references: [ids]}`.
#[derive(Debug, Clone, Default)]
pub struct FixtureResolver {
    refs: HashMap<String, Vec<String>>,
}

impl FixtureResolver {
    pub fn new(refs: HashMap<String, Vec<String>>) -> Self {
        FixtureResolver { refs }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut refs = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: ResolverLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            refs.insert(l.paper_id, l.references);
        }
        Ok(FixtureResolver { refs })
    }
}

impl ReferenceResolver for FixtureResolver {
    fn references(&self, doc_id: &str) -> Result<Option<Vec<String>>> {
        Ok(self.refs.get(doc_id).cloned())
    }
}

/// Stand-in used when no resolver is configured; always unavailable.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoResolver;

impl ReferenceResolver for NoResolver {
    fn references(&self, _: &str) -> Result<Option<Vec<String>>> {
        Err(Error::Provider("no reference resolver configured".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub entity: String,
    pub paper_id: String,
    pub title: String,
    pub sentence_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    pub confirmed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCitationReport {
    pub doc_id: String,
    pub findings: Vec<Finding>,
    pub potential: Vec<Finding>,
    /// Distinct in-dataset entities passed through detection.
    pub checked: usize,
    pub flagged: usize,
    pub resolver_available: bool,
    pub criterion: Criterion,
    pub lambda: f64,
}

pub struct CheckContext<'a> {
    pub ds: &'a MappingDataset,
    pub cfg: RankingConfig,
    pub extractor: &'a dyn EntityExtractor,
    pub scorer: Option<&'a ContextScorer<'a>>,
    pub metadata: &'a MetadataStore,
    pub resolver: &'a dyn ReferenceResolver,
}

/// Runs detection over every entity occurrence of `doc`, deduplicates by
/// (entity, paper) and confirms the results with the resolver.
pub fn check_document(doc: &QueryDocument, cx: &CheckContext<'_>, exec: Execution) -> Result<MissingCitationReport> {
    cx.cfg.validate()?;
    let refset = ReferenceSet::from_entries(&doc.references);
    let mentions = document_mentions(doc, cx.extractor, exec);

    let mut checked = HashSet::new();
    let mut seen = HashSet::new();
    let mut potential = Vec::new();
    for (sentence, ms) in doc.sentences.iter().zip(&mentions) {
        for m in ms {
            if !cx.ds.contains(&m.canonical) {
                continue;
            }
            checked.insert(m.canonical.clone());
            let Some(top) = dmc(
                &m.canonical,
                &sentence.text,
                cx.ds,
                &refset,
                &cx.cfg,
                cx.scorer,
                cx.metadata,
            )?
            else {
                continue;
            };
            if !seen.insert((m.canonical.clone(), top.paper_id.clone())) {
                continue;
            }
            let meta = cx.metadata.get(&top.paper_id);
            potential.push(Finding {
                entity: m.canonical.clone(),
                title: meta.map(|m| m.title.clone()).unwrap_or_default(),
                year: meta.and_then(|m| m.year),
                paper_id: top.paper_id,
                sentence_index: sentence.index,
                confirmed: false,
            });
        }
    }

    let (findings, resolver_available) = match cx.resolver.references(&doc.doc_id) {
        Ok(Some(ids)) => {
            let ids: HashSet<String> = ids.into_iter().collect();
            let confirmed = potential
                .iter()
                .filter(|f| !ids.contains(&f.paper_id))
                .map(|f| Finding {
                    confirmed: true,
                    ..f.clone()
                })
                .collect();
            (confirmed, true)
        }
        Ok(None) => (Vec::new(), true),
        Err(e) => {
            log::warn!(
                "resolver unavailable for {}: {e}; findings left unconfirmed",
                doc.doc_id
            );
            (potential.clone(), false)
        }
    };

    Ok(MissingCitationReport {
        doc_id: doc.doc_id.clone(),
        flagged: findings.len(),
        findings,
        potential,
        checked: checked.len(),
        resolver_available,
        criterion: cx.cfg.criterion,
        lambda: cx.cfg.lambda,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedFinding {
    pub entity: String,
    pub paper_id: String,
    pub year: Option<i32>,
}

/// Groups findings by recommended paper, merges alias surface forms within
/// each group and returns one row per distinct (merged entity, paper).
pub fn merge_findings<'a, I>(findings: I) -> Vec<MergedFinding>
where
    I: IntoIterator<Item = &'a Finding>,
{
    let mut by_paper: BTreeMap<String, (Vec<String>, Option<i32>)> = BTreeMap::new();
    for f in findings {
        let slot = by_paper.entry(f.paper_id.clone()).or_default();
        slot.0.push(f.entity.clone());
        slot.1 = slot.1.or(f.year);
    }
    let mut out = Vec::new();
    for (paper_id, (entities, year)) in by_paper {
        let merged: BTreeMap<String, String> = merge_aliases(&entities);
        let keys: std::collections::BTreeSet<&String> = merged.values().collect();
        for k in keys {
            out.push(MergedFinding {
                entity: k.clone(),
                paper_id: paper_id.clone(),
                year,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeStats {
    pub max: i32,
    pub min: i32,
    pub mode: i32,
    pub mean: f64,
    /// Midpoint median, rounded half-up to one decimal.
    pub median: f64,
    pub n: usize,
}

/// Age statistics of source papers relative to `baseline_year`.
pub fn age_stats(years: &[i32], baseline_year: i32) -> Result<AgeStats> {
    if years.is_empty() {
        return Err(Error::NoFindings);
    }
    if let Some(y) = years.iter().find(|&&y| y > baseline_year) {
        return Err(Error::InvalidArgument(format!(
            "year {y} is after baseline year {baseline_year}"
        )));
    }
    let mut ages: Vec<i32> = years.iter().map(|y| baseline_year - y).collect();
    ages.sort_unstable();
    let n = ages.len();

    let mut freq: BTreeMap<i32, usize> = BTreeMap::new();
    for a in &ages {
        *freq.entry(*a).or_insert(0) += 1;
    }
    let top = *freq.values().max().expect("non-empty");
    let mode = *freq.iter().find(|(_, c)| **c == top).expect("non-empty").0;

    let mid = if n % 2 == 1 {
        f64::from(ages[n / 2])
    } else {
        (f64::from(ages[n / 2 - 1]) + f64::from(ages[n / 2])) / 2.0
    };
    let median = (mid * 10.0 + 0.5).floor() / 10.0;
    let mean = ages.iter().map(|a| i64::from(*a)).sum::<i64>() as f64 / n as f64;

    Ok(AgeStats {
        max: ages[n - 1],
        min: ages[0],
        mode,
        mean,
        median,
        n,
    })
}
