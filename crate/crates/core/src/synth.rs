//! Seeded synthetic corpora with known source papers.
//!
//! Every entity has one source paper cited next to it in
//! `docs_per_entity` sentences. A share of extra sentences cites one of
//! four distractor papers next to the same entity. Outlier terms are
//! capitalized surname-like words cited next to many papers with nearly
//! equal counts.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{validate_record, PaperRecord, RawRecord, RawSpan, ReferenceEntry};
use crate::error::{Error, Result};
use crate::eval::GoldLabel;
use crate::fsutil::write_atomic;
use crate::ranking::PaperMetadata;

const PREFIXES: &[&str] = &[
    "Velo", "Astra", "Quill", "Nimbus", "Cobalt", "Ferro", "Hexa", "Lumen", "Morph", "Octa", "Pulse", "Rivet", "Sigma",
    "Tessa", "Umbra", "Vortex", "Zephyr", "Kappa", "Delta", "Orbit",
];
const SUFFIXES: &[&str] = &[
    "Net", "Former", "GAN", "Flow", "Seg", "Match", "Vec", "Rank", "Tune", "Graph", "Mix", "Lab", "Pose", "Track",
    "Sum",
];
const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["", "n", "r", "s", "k", "l"];
const TOPIC_WORDS: &[&str] = &[
    "parsing",
    "retrieval",
    "translation",
    "segmentation",
    "detection",
    "tagging",
    "summarization",
    "alignment",
    "clustering",
    "captioning",
    "generation",
    "recognition",
];
const ADJECTIVES: &[&str] = &[
    "efficient",
    "robust",
    "scalable",
    "sparse",
    "adaptive",
    "compact",
    "deep",
];
const FILLER: &[&str] = &[
    "signals",
    "corpora",
    "graphs",
    "benchmarks",
    "features",
    "layers",
    "samples",
    "budgets",
];

const CITING: &[&str] = &[
    "We build on {E} {M} for the encoder.",
    "Our system adopts {E} {M} without changes.",
    "Following {E} {M} we tune all settings.",
    "Results with {E} {M} are reported below.",
    "In practice {E} {M} converges quickly.",
];
const OUTLIER: &[&str] = &[
    "This follows {E} {M} closely.",
    "As argued by {E} {M} the effect is small.",
    "Prior work by {E} {M} covers the same setting.",
];
const GOLD: &[&str] = &[
    "We apply {E} to {T} on a new corpus.",
    "Our baseline uses {E} for {T} as well.",
    "For {T} we start from {E} directly.",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_entities: usize,
    /// Source-citing sentences per entity.
    pub docs_per_entity: usize,
    /// Share of an entity's cited sentences that cite a distractor.
    pub distractor_rate: f64,
    pub n_outliers: usize,
    /// Papers cited next to each outlier term.
    pub outlier_papers: usize,
    /// Minimum per-paper count for outlier terms.
    pub outlier_count: usize,
    pub sentences_per_doc: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_entities: 200,
            docs_per_entity: 25,
            distractor_rate: 0.0,
            n_outliers: 20,
            outlier_papers: 10,
            outlier_count: 20,
            sentences_per_doc: 8,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.distractor_rate) {
            return Err(Error::InvalidArgument(format!(
                "distractor rate must be in [0, 1), got {}",
                self.distractor_rate
            )));
        }
        if self.docs_per_entity == 0 || self.sentences_per_doc == 0 {
            return Err(Error::InvalidArgument(
                "docs per entity and sentences per doc must be at least 1".into(),
            ));
        }
        if self.n_outliers > 0 && (self.outlier_papers == 0 || self.outlier_count == 0) {
            return Err(Error::InvalidArgument(
                "outlier papers and count must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Distractor sentences per entity for the configured rate.
    pub fn distractors_per_entity(&self) -> usize {
        let d = self.docs_per_entity as f64;
        ((d / (1.0 - self.distractor_rate)).ceil() as usize).saturating_sub(self.docs_per_entity)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<PaperRecord>,
    pub gold: Vec<GoldLabel>,
    pub metadata: Vec<PaperMetadata>,
    /// Entity names, parallel to `sources`.
    pub entities: Vec<String>,
    pub sources: Vec<String>,
    pub outlier_terms: Vec<String>,
}

struct Event {
    template: &'static str,
    term: String,
    target: String,
}

fn entity_names(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut combos: Vec<String> = PREFIXES
        .iter()
        .flat_map(|p| SUFFIXES.iter().map(move |s| format!("{p}{s}")))
        .collect();
    combos.shuffle(rng);
    let base = combos.len();
    (0..n)
        .map(|i| {
            if i < base {
                combos[i].clone()
            } else {
                format!("{}{}", combos[i % base], i / base + 1)
            }
        })
        .collect()
}

fn surname_names(n: usize, taken: &[String], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen: std::collections::HashSet<String> = taken.iter().map(|s| s.to_lowercase()).collect();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
        if seen.insert(w.clone()) {
            let mut c = w.chars();
            let first = c.next().expect("non-empty").to_uppercase().collect::<String>();
            out.push(first + c.as_str());
        }
    }
    out
}

fn pick<'a>(items: &[&'a str], rng: &mut ChaCha8Rng) -> &'a str {
    items[rng.random_range(0..items.len())]
}

/// Builds a corpus that is byte-identical for equal `spec` and `seed`.
pub fn generate_synthetic_corpus(spec: &SynthSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entities = entity_names(spec.n_entities, &mut rng);
    let outlier_terms = surname_names(spec.n_outliers, &entities, &mut rng);

    let mut metadata = Vec::new();
    let mut sources = Vec::new();
    let mut topics = Vec::new();
    let mut events = Vec::new();
    let n_distract = spec.distractors_per_entity();

    for (i, e) in entities.iter().enumerate() {
        let src = format!("src-{i:04}");
        let topic = pick(TOPIC_WORDS, &mut rng);
        let adj = pick(ADJECTIVES, &mut rng);
        metadata.push(PaperMetadata {
            paper_id: src.clone(),
            title: format!("{e}: {adj} {topic} with {}", pick(FILLER, &mut rng)),
            abstract_text: format!("we present {e}, an {adj} approach to {topic}."),
            year: Some(rng.random_range(2000..=2020)),
        });
        for _ in 0..spec.docs_per_entity {
            events.push(Event {
                template: pick(CITING, &mut rng),
                term: e.clone(),
                target: src.clone(),
            });
        }
        for j in 0..4 {
            metadata.push(PaperMetadata {
                paper_id: format!("dis-{i:04}-{j}"),
                title: format!(
                    "on {} {} for {}",
                    pick(ADJECTIVES, &mut rng),
                    pick(FILLER, &mut rng),
                    pick(TOPIC_WORDS, &mut rng)
                ),
                abstract_text: String::new(),
                year: Some(rng.random_range(2000..=2020)),
            });
        }
        for _ in 0..n_distract {
            let j = rng.random_range(0..4);
            events.push(Event {
                template: pick(CITING, &mut rng),
                term: e.clone(),
                target: format!("dis-{i:04}-{j}"),
            });
        }
        sources.push(src);
        topics.push(topic);
    }

    let pool = (spec.outlier_papers * 3).max(1);
    let ref_papers = if spec.n_outliers > 0 { pool } else { 0 };
    for k in 0..ref_papers {
        metadata.push(PaperMetadata {
            paper_id: format!("ref-{k:04}"),
            title: format!("notes on {} {}", pick(FILLER, &mut rng), pick(TOPIC_WORDS, &mut rng)),
            abstract_text: String::new(),
            year: Some(rng.random_range(1990..=2020)),
        });
    }
    for term in &outlier_terms {
        let papers = rand::seq::index::sample(&mut rng, pool, spec.outlier_papers.min(pool));
        for k in papers.iter() {
            let n = spec.outlier_count + rng.random_range(0..3);
            for _ in 0..n {
                events.push(Event {
                    template: pick(OUTLIER, &mut rng),
                    term: term.clone(),
                    target: format!("ref-{k:04}"),
                });
            }
        }
    }
    events.shuffle(&mut rng);

    let mut records = Vec::new();
    for (n, chunk) in events.chunks(spec.sentences_per_doc).enumerate() {
        records.push(build_record(n, chunk)?);
    }

    let gold = entities
        .iter()
        .enumerate()
        .map(|(i, e)| GoldLabel {
            entity: e.clone(),
            gold_id: sources[i].clone(),
            sentence: pick(GOLD, &mut rng).replace("{E}", e).replace("{T}", topics[i]),
        })
        .collect();
    metadata.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));

    Ok(SyntheticCorpus {
        records,
        gold,
        metadata,
        entities,
        sources,
        outlier_terms,
    })
}

fn build_record(n: usize, events: &[Event]) -> Result<PaperRecord> {
    let mut refs: Vec<String> = Vec::new();
    let mut ref_index: HashMap<&str, usize> = HashMap::new();
    let mut body = String::new();
    let mut len = 0usize;
    let mut spans = Vec::new();
    for ev in events {
        let idx = *ref_index.entry(ev.target.as_str()).or_insert_with(|| {
            refs.push(ev.target.clone());
            refs.len()
        });
        if !body.is_empty() {
            body.push(' ');
            len += 1;
        }
        let marker = format!("[{idx}]");
        let (before, after) = ev.template.split_once("{M}").expect("template has a marker");
        let before = before.replace("{E}", &ev.term);
        let start = len + before.chars().count();
        let end = start + marker.chars().count();
        body.push_str(&before);
        body.push_str(&marker);
        body.push_str(after);
        len = end + after.chars().count();
        spans.push(RawSpan {
            start,
            end,
            target: Some(ev.target.clone()),
        });
    }
    validate_record(RawRecord {
        paper_id: format!("cite-{n:05}"),
        title: format!("citing study {n}"),
        abstract_text: String::new(),
        body,
        citation_spans: spans,
        references: refs.into_iter().map(|r| ReferenceEntry::new(r, "")).collect(),
        year: Some(2021),
    })
}

impl SyntheticCorpus {
    pub fn titles(&self) -> Vec<&str> {
        self.metadata.iter().map(|m| m.title.as_str()).collect()
    }

    /// Writes `corpus.jsonl`, `gold.jsonl`, `metadata.jsonl` and
    /// `surnames.tsv` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| write_atomic(dir.join(name), text.as_bytes());
        write(
            "corpus.jsonl",
            self.records.iter().map(|r| r.to_json_line() + "\n").collect(),
        )?;
        write("gold.jsonl", jsonl(&self.gold))?;
        write("metadata.jsonl", jsonl(&self.metadata))?;
        let n = self.outlier_terms.len();
        write(
            "surnames.tsv",
            self.outlier_terms
                .iter()
                .enumerate()
                .map(|(i, s)| format!("{s}\t{}\n", (n - i) * 100))
                .collect(),
        )
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| serde_json::to_string(x).expect("serializable") + "\n")
        .collect()
}
