//! Entity/citation cooccurrence counting and the persisted mapping dataset.
//!
//! Dataset file layout (UTF-8, `\n` line endings, every line terminated):
//!
//! ```text
//! CRPSE-DS v1 threshold=20
//! <entity>\t<paper_id>\t<count>
//! ```
//!
//! Entities are sorted lexicographically (byte order); each entity's
//! candidates are sorted by descending count, then ascending paper id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::PaperRecord;
use crate::error::{Error, Result};
use crate::extract::{extract_entities, DocumentContext, EntityExtractor, EntityMention};
use crate::par::{self, Execution};
use crate::segment::Sentence;

pub const DATASET_MAGIC: &str = "CRPSE-DS";
pub const DATASET_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLD: u64 = 20;

/// Raw (entity, paper) cooccurrence counts. Merging is pointwise addition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Accumulator {
    counts: HashMap<String, HashMap<String, u64>>,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, entity: &str, paper_id: &str, n: u64) {
        *self
            .counts
            .entry(entity.to_string())
            .or_default()
            .entry(paper_id.to_string())
            .or_insert(0) += n;
    }

    pub fn get(&self, entity: &str, paper_id: &str) -> u64 {
        self.counts
            .get(entity)
            .and_then(|c| c.get(paper_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn entity_count(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn merge(mut self, other: Accumulator) -> Accumulator {
        if self.counts.len() < other.counts.len() {
            return other.merge(self);
        }
        for (entity, cands) in other.counts {
            let slot = self.counts.entry(entity).or_default();
            for (paper, n) in cands {
                *slot.entry(paper).or_insert(0) += n;
            }
        }
        self
    }

    /// Counts as a sorted map, for comparisons in tests and tools.
    pub fn to_sorted(&self) -> BTreeMap<String, BTreeMap<String, u64>> {
        self.counts
            .iter()
            .map(|(e, c)| (e.clone(), c.iter().map(|(p, n)| (p.clone(), *n)).collect()))
            .collect()
    }
}

/// Adds one to every (entity, cited paper) pair in the sentence.
///
/// Pairs are distinct per sentence: repeated mentions or repeated markers
/// for the same paper count once. A citation whose marker overlaps the
/// mention itself does not count for that mention.
pub fn record_cooccurrences(sentence: &Sentence, mentions: &[EntityMention], acc: &mut Accumulator) {
    if sentence.citations.is_empty() {
        return;
    }
    let mut pairs: HashSet<(&str, &str)> = HashSet::new();
    for m in mentions {
        for c in &sentence.citations {
            if !m.overlaps(c.start, c.end) {
                pairs.insert((m.canonical.as_str(), c.target.as_str()));
            }
        }
    }
    for (e, p) in pairs {
        acc.add(e, p, 1);
    }
}

/// Segments, extracts and counts one corpus paper.
pub fn accumulate_record(rec: &PaperRecord, extractor: &dyn EntityExtractor, acc: &mut Accumulator) {
    let sentences = rec.sentences();
    let ctx = DocumentContext::from_sentences(&sentences);
    for s in sentences.iter().filter(|s| !s.citations.is_empty()) {
        let mentions = extract_entities(s, extractor, &ctx);
        record_cooccurrences(s, &mentions, acc);
    }
}

/// Builds the raw accumulator over a corpus, one accumulator per worker.
pub fn accumulate_corpus(records: &[PaperRecord], extractor: &dyn EntityExtractor, exec: Execution) -> Accumulator {
    par::fold_reduce(
        exec,
        records,
        Accumulator::new,
        |mut acc, rec| {
            accumulate_record(rec, extractor, &mut acc);
            acc
        },
        Accumulator::merge,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    /// Sorted by descending count, then ascending paper id.
    candidates: Vec<(String, u64)>,
    total: u64,
}

impl CandidateSet {
    /// Builds a set from (paper, count) pairs; zero counts are dropped and
    /// duplicate papers summed.
    pub fn new<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut merged: BTreeMap<String, u64> = BTreeMap::new();
        for (p, n) in pairs {
            let p = p.into();
            if p.is_empty() {
                return Err(Error::InvalidArgument("empty paper id in candidate set".into()));
            }
            if n > 0 {
                *merged.entry(p).or_insert(0) += n;
            }
        }
        if merged.is_empty() {
            return Err(Error::InvalidArgument(
                "candidate set needs at least one candidate".into(),
            ));
        }
        let mut candidates: Vec<(String, u64)> = merged.into_iter().collect();
        candidates.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let total = candidates.iter().map(|c| c.1).sum();
        Ok(CandidateSet { candidates, total })
    }

    pub fn candidates(&self) -> &[(String, u64)] {
        &self.candidates
    }

    /// SC: the sum of all candidate counts.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn max_count(&self) -> u64 {
        self.candidates[0].1
    }

    pub fn count(&self, paper_id: &str) -> u64 {
        self.candidates.iter().find(|c| c.0 == paper_id).map_or(0, |c| c.1)
    }

    pub fn counts(&self) -> Vec<u64> {
        self.candidates.iter().map(|c| c.1).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetMeta {
    pub threshold: u64,
}

/// The thresholded entity to candidate-papers index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingDataset {
    pub entries: BTreeMap<String, CandidateSet>,
    pub meta: DatasetMeta,
}

impl MappingDataset {
    pub fn empty(threshold: u64) -> Self {
        MappingDataset {
            entries: BTreeMap::new(),
            meta: DatasetMeta { threshold },
        }
    }

    pub fn get(&self, entity: &str) -> Option<&CandidateSet> {
        self.entries.get(entity)
    }

    pub fn contains(&self, entity: &str) -> bool {
        self.entries.contains_key(entity)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, entity: impl Into<String>, set: CandidateSet) {
        self.entries.insert(entity.into(), set);
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{DATASET_MAGIC} v{DATASET_VERSION} threshold={}\n", self.meta.threshold);
        for (entity, set) in &self.entries {
            for (paper, n) in &set.candidates {
                let _ = writeln!(out, "{entity}\t{paper}\t{n}");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        if !text.ends_with('\n') {
            return Err(parse_err(
                text.lines().count().max(1),
                "truncated file: missing final newline".into(),
            ));
        }
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
        let threshold = parse_header(header, DATASET_MAGIC, DATASET_VERSION)?
            .strip_prefix("threshold=")
            .and_then(|t| t.parse::<u64>().ok())
            .ok_or_else(|| parse_err(1, format!("bad header {header:?}")))?;

        let mut grouped: Vec<(String, Vec<(String, u64)>)> = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let mut fields = line.split('\t');
            let (Some(e), Some(p), Some(n), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err(line_no, format!("expected 3 tab-separated fields: {line:?}")));
            };
            let n: u64 = n.parse().map_err(|_| parse_err(line_no, format!("bad count {n:?}")))?;
            if n == 0 || e.is_empty() || p.is_empty() {
                return Err(parse_err(line_no, "empty field or zero count".into()));
            }
            match grouped.last_mut() {
                Some((last, cands)) if last == e => cands.push((p.to_string(), n)),
                Some((last, _)) if last.as_str() > e => {
                    return Err(parse_err(line_no, format!("entities out of order at {e:?}")));
                }
                _ => grouped.push((e.to_string(), vec![(p.to_string(), n)])),
            }
        }

        let mut entries = BTreeMap::new();
        for (entity, cands) in grouped {
            let n_cands = cands.len();
            let set = CandidateSet::new(cands)?;
            if set.len() != n_cands {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("duplicate candidate for entity {entity:?}"),
                });
            }
            if set.max_count() < threshold {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("entity {entity:?} below threshold {threshold}"),
                });
            }
            entries.insert(entity, set);
        }
        Ok(MappingDataset {
            entries,
            meta: DatasetMeta { threshold },
        })
    }

    pub fn check_serializable(&self) -> Result<()> {
        let bad = |s: &str| s.is_empty() || s.contains(['\t', '\n', '\r']);
        for (e, set) in &self.entries {
            if bad(e) || set.candidates.iter().any(|(p, _)| bad(p)) {
                return Err(Error::InvalidArgument(format!(
                    "entity {e:?} or one of its paper ids cannot be written (empty or contains tab/newline)"
                )));
            }
        }
        Ok(())
    }
}

/// Parses `<MAGIC> v<N> rest` and returns `rest`.
pub(crate) fn parse_header<'a>(header: &'a str, magic: &'static str, version: u32) -> Result<&'a str> {
    let bad = || Error::Parse {
        line: 1,
        msg: format!("expected {magic} header, found {header:?}"),
    };
    let rest = header.strip_prefix(magic).ok_or_else(bad)?;
    let rest = rest.strip_prefix(" v").ok_or_else(bad)?;
    let (ver, rest) = rest.split_once(' ').unwrap_or((rest, ""));
    let found: u32 = ver.parse().map_err(|_| bad())?;
    if found != version {
        return Err(Error::VersionMismatch {
            format: magic,
            expected: version,
            found,
        });
    }
    Ok(rest)
}

/// Drops every entity whose best candidate has fewer than `min_count`
/// cooccurrences. Retained entities keep all their candidates.
pub fn apply_threshold(raw: &Accumulator, min_count: u64) -> Result<MappingDataset> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("threshold must be at least 1".into()));
    }
    let mut ds = MappingDataset::empty(min_count);
    for (entity, cands) in &raw.counts {
        if cands.values().copied().max().unwrap_or(0) < min_count {
            continue;
        }
        let set = CandidateSet::new(cands.iter().map(|(p, n)| (p.clone(), *n)))?;
        ds.entries.insert(entity.clone(), set);
    }
    Ok(ds)
}

pub fn save_dataset(ds: &MappingDataset, path: impl AsRef<Path>) -> Result<()> {
    ds.check_serializable()?;
    let path = path.as_ref();
    crate::fsutil::write_atomic(path, ds.to_text().as_bytes())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<MappingDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MappingDataset::from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::SentenceCitation;
    use proptest::prelude::*;

    fn sentence(cites: &[&str]) -> Sentence {
        let mut s = Sentence::new(1, "E is used here [x] [y].");
        s.citations = cites
            .iter()
            .enumerate()
            .map(|(i, t)| SentenceCitation {
                target: t.to_string(),
                start: 15 + 4 * i,
                end: 18 + 4 * i,
            })
            .collect();
        s
    }

    fn mention(c: &str) -> EntityMention {
        EntityMention {
            surface: c.into(),
            canonical: c.into(),
            sentence_index: 1,
            start: 0,
            end: 1,
        }
    }

    #[test]
    fn two_cited_papers() {
        let mut acc = Accumulator::new();
        record_cooccurrences(&sentence(&["P1", "P2"]), &[mention("E")], &mut acc);
        assert_eq!(acc.get("E", "P1"), 1);
        assert_eq!(acc.get("E", "P2"), 1);
    }

    #[test]
    fn no_citations_no_change() {
        let mut acc = Accumulator::new();
        record_cooccurrences(&sentence(&[]), &[mention("E")], &mut acc);
        assert!(acc.is_empty());
    }

    #[test]
    fn pairs_count_once_per_sentence() {
        let mut acc = Accumulator::new();
        record_cooccurrences(&sentence(&["P1", "P1"]), &[mention("E"), mention("E")], &mut acc);
        assert_eq!(acc.get("E", "P1"), 1);
    }

    #[test]
    fn overlapping_marker_excluded() {
        let mut acc = Accumulator::new();
        let mut m = mention("E");
        m.start = 15;
        m.end = 18;
        record_cooccurrences(&sentence(&["P1", "P2"]), &[m], &mut acc);
        assert_eq!(acc.get("E", "P1"), 0);
        assert_eq!(acc.get("E", "P2"), 1);
    }

    fn acc_from(pairs: &[(&str, &str, u64)]) -> Accumulator {
        let mut acc = Accumulator::new();
        for (e, p, n) in pairs {
            acc.add(e, p, *n);
        }
        acc
    }

    #[test]
    fn threshold_boundary() {
        let acc = acc_from(&[("Low", "A", 19), ("High", "A", 20), ("High", "B", 2)]);
        let ds = apply_threshold(&acc, 20).unwrap();
        assert!(!ds.contains("Low"));
        let high = ds.get("High").unwrap();
        assert_eq!(high.len(), 2);
        assert_eq!(high.count("B"), 2);
        assert_eq!(high.total(), 22);
    }

    #[test]
    fn empty_accumulator() {
        assert!(apply_threshold(&Accumulator::new(), 20).unwrap().is_empty());
        assert!(apply_threshold(&Accumulator::new(), 0).is_err());
    }

    #[test]
    fn text_round_trip_and_layout() {
        let acc = acc_from(&[
            ("BERT", "P2", 20),
            ("BERT", "P1", 20),
            ("BERT", "P3", 40),
            ("Adam", "K", 25),
        ]);
        let ds = apply_threshold(&acc, 20).unwrap();
        let text = ds.to_text();
        assert_eq!(
            text,
            "CRPSE-DS v1 threshold=20\nAdam\tK\t25\nBERT\tP3\t40\nBERT\tP1\t20\nBERT\tP2\t20\n"
        );
        assert_eq!(MappingDataset::from_text(&text).unwrap(), ds);
    }

    #[test]
    fn truncated_file_rejected() {
        let text = "CRPSE-DS v1 threshold=20\nAdam\tK\t25\nBERT\tP3\t4";
        assert!(matches!(MappingDataset::from_text(text), Err(Error::Parse { .. })));
        let text = "CRPSE-DS v1 threshold=20\nAdam\tK\n";
        assert!(matches!(MappingDataset::from_text(text), Err(Error::Parse { .. })));
    }

    #[test]
    fn newer_version_rejected() {
        let err = MappingDataset::from_text("CRPSE-DS v2 threshold=20\n").unwrap_err();
        match err {
            Error::VersionMismatch { expected, found, .. } => assert_eq!((expected, found), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tab_in_entity_not_serializable() {
        let mut ds = MappingDataset::empty(1);
        ds.insert("a\tb", CandidateSet::new([("P", 3)]).unwrap());
        assert!(ds.check_serializable().is_err());
    }

    proptest! {
        #[test]
        fn accumulation_is_order_independent_and_monotone(
            items in proptest::collection::vec((0u8..5, 0u8..5), 0..60),
            rot in 0usize..60,
        ) {
            let sentences: Vec<(String, String)> = items
                .iter()
                .map(|(e, p)| (format!("E{e}"), format!("P{p}")))
                .collect();
            let run = |order: &[(String, String)]| {
                let mut acc = Accumulator::new();
                for (e, p) in order {
                    record_cooccurrences(&sentence(&[p]), &[mention(e)], &mut acc);
                }
                acc
            };
            let forward = run(&sentences);
            let mut rotated = sentences.clone();
            if !rotated.is_empty() {
                let k = rot % rotated.len();
                rotated.rotate_left(k);
            }
            rotated.reverse();
            prop_assert_eq!(forward.to_sorted(), run(&rotated).to_sorted());

            let half = run(&sentences[..sentences.len() / 2]);
            for (e, c) in half.to_sorted() {
                for (p, n) in c {
                    prop_assert!(forward.get(&e, &p) >= n);
                }
            }

            let ds = apply_threshold(&forward, 3).unwrap();
            for set in ds.entries.values() {
                prop_assert!(set.max_count() >= 3);
                prop_assert_eq!(set.total(), set.counts().iter().sum::<u64>());
            }
            let reparsed = MappingDataset::from_text(&ds.to_text()).unwrap();
            prop_assert_eq!(reparsed, ds);
        }
    }
}
