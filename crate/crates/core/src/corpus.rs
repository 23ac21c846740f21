//! Corpus records and line-delimited ingestion.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"paper_id":"P1","title":"...","abstract":"...","body":"...",
//!  "citation_spans":[{"start":4,"end":7,"target":"P9"}],
//!  "references":[{"id":"P9","title":"..."}],"year":2019}
//! ```
//!
//! Span offsets count Unicode scalar values (characters), not bytes.
//! Spans whose `target` is missing or empty are unresolved and dropped.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::segment::{segment_sentences, Sentence};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationSpan {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "target")]
    pub target_paper_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    #[serde(rename = "id", default)]
    pub ref_paper_id: String,
    #[serde(rename = "title", default)]
    pub raw_title: String,
}

impl ReferenceEntry {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        ReferenceEntry {
            ref_paper_id: id.into(),
            raw_title: title.into(),
        }
    }
}

/// One validated corpus paper. Immutable once built by [`validate_record`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaperRecord {
    pub paper_id: String,
    pub title: String,
    pub abstract_text: String,
    pub body: String,
    pub citation_spans: Vec<CitationSpan>,
    pub references: Vec<ReferenceEntry>,
    pub year: Option<i32>,
}

/// Fields exactly as they appear on one input line, before validation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawRecord {
    pub paper_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(rename = "abstract", default)]
    pub abstract_text: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub citation_spans: Vec<RawSpan>,
    #[serde(default)]
    pub references: Vec<ReferenceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSpan {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub target: Option<String>,
}

/// Checks every record invariant and returns the first violation.
pub fn validate_record(raw: RawRecord) -> Result<PaperRecord> {
    if raw.paper_id.trim().is_empty() {
        return Err(Error::Validation("empty paper_id".into()));
    }
    if raw.body.trim().is_empty() {
        return Err(Error::Validation("empty body".into()));
    }
    for r in &raw.references {
        if r.ref_paper_id.is_empty() && r.raw_title.is_empty() {
            return Err(Error::Validation("reference with neither id nor title".into()));
        }
    }

    let body_len = raw.body.chars().count();
    let ref_ids: HashSet<&str> = raw
        .references
        .iter()
        .map(|r| r.ref_paper_id.as_str())
        .filter(|id| !id.is_empty())
        .collect();

    let mut spans = Vec::with_capacity(raw.citation_spans.len());
    for s in raw.citation_spans {
        let target = match s.target {
            Some(t) if !t.is_empty() => t,
            _ => continue,
        };
        if s.start >= s.end {
            return Err(Error::Validation(format!(
                "empty or inverted span {}..{}",
                s.start, s.end
            )));
        }
        if s.end > body_len {
            return Err(Error::Validation(format!(
                "span out of bounds: {}..{} exceeds body length {}",
                s.start, s.end, body_len
            )));
        }
        if !ref_ids.contains(target.as_str()) {
            return Err(Error::Validation(format!(
                "span target {target:?} missing from references"
            )));
        }
        spans.push(CitationSpan {
            start: s.start,
            end: s.end,
            target_paper_id: target,
        });
    }
    spans.sort_by_key(|s| (s.start, s.end));
    if let Some(w) = spans.windows(2).find(|w| w[1].start < w[0].end) {
        return Err(Error::Validation(format!(
            "overlapping spans {}..{} and {}..{}",
            w[0].start, w[0].end, w[1].start, w[1].end
        )));
    }

    Ok(PaperRecord {
        paper_id: raw.paper_id,
        title: raw.title,
        abstract_text: raw.abstract_text,
        body: raw.body,
        citation_spans: spans,
        references: raw.references,
        year: raw.year,
    })
}

impl PaperRecord {
    pub fn to_raw(&self) -> RawRecord {
        RawRecord {
            paper_id: self.paper_id.clone(),
            title: self.title.clone(),
            abstract_text: self.abstract_text.clone(),
            body: self.body.clone(),
            citation_spans: self
                .citation_spans
                .iter()
                .map(|s| RawSpan {
                    start: s.start,
                    end: s.end,
                    target: Some(s.target_paper_id.clone()),
                })
                .collect(),
            references: self.references.clone(),
            year: self.year,
        }
    }

    /// Serializes to a single corpus line (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_raw()).expect("record serialization cannot fail")
    }

    pub fn sentences(&self) -> Vec<Sentence> {
        segment_sentences(&self.body, &self.citation_spans)
    }
}

pub fn parse_record_line(line: &str) -> Result<PaperRecord> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Validation(format!("malformed JSON: {e}")))?;
    validate_record(raw)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub loaded: usize,
    pub skipped: usize,
}

impl LoadSummary {
    pub fn merge(self, other: LoadSummary) -> LoadSummary {
        LoadSummary {
            loaded: self.loaded + other.loaded,
            skipped: self.skipped + other.skipped,
        }
    }
}

/// Lazily reads a corpus file, yielding valid records in file order.
///
/// Malformed lines, invalid records and duplicate `paper_id`s are skipped
/// and counted; blank lines count as skipped so that `loaded + skipped`
/// always equals the number of input lines.
pub struct CorpusReader<R> {
    reader: R,
    path: PathBuf,
    line_no: usize,
    seen: HashSet<String>,
    summary: LoadSummary,
    io_error: Option<std::io::Error>,
    buf: Vec<u8>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusReader<BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(CorpusReader::new(BufReader::new(file), path))
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        CorpusReader {
            reader,
            path: path.into(),
            line_no: 0,
            seen: HashSet::new(),
            summary: LoadSummary::default(),
            io_error: None,
            buf: Vec::new(),
        }
    }

    pub fn summary(&self) -> LoadSummary {
        self.summary
    }

    /// Consumes the reader's error state; call after exhaustion.
    pub fn finish(self) -> Result<LoadSummary> {
        match self.io_error {
            Some(e) => Err(Error::io(self.path, e)),
            None => Ok(self.summary),
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = PaperRecord;

    fn next(&mut self) -> Option<PaperRecord> {
        loop {
            if self.io_error.is_some() {
                return None;
            }
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.io_error = Some(e);
                    return None;
                }
            }
            self.line_no += 1;
            let parsed = std::str::from_utf8(&self.buf)
                .map_err(|e| Error::Validation(format!("invalid UTF-8: {e}")))
                .and_then(|line| parse_record_line(line.trim_end_matches(['\n', '\r'])));
            match parsed {
                Ok(rec) if self.seen.insert(rec.paper_id.clone()) => {
                    self.summary.loaded += 1;
                    return Some(rec);
                }
                Ok(rec) => {
                    log::warn!(
                        "{}:{}: duplicate paper_id {:?}, skipped",
                        self.path.display(),
                        self.line_no,
                        rec.paper_id
                    );
                    self.summary.skipped += 1;
                }
                Err(e) => {
                    log::debug!("{}:{}: {e}", self.path.display(), self.line_no);
                    self.summary.skipped += 1;
                }
            }
        }
    }
}

/// Reads a whole corpus into memory, parsing lines on worker threads.
pub fn load_corpus_all(path: impl AsRef<Path>, exec: Execution) -> Result<(Vec<PaperRecord>, LoadSummary)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&[u8]> = if bytes.is_empty() {
        Vec::new()
    } else {
        let trimmed = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
        trimmed.split(|b| *b == b'\n').collect()
    };
    let parsed = par::map(exec, &lines, |line| {
        std::str::from_utf8(line)
            .ok()
            .and_then(|l| parse_record_line(l.trim_end_matches('\r')).ok())
    });

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut summary = LoadSummary::default();
    for rec in parsed {
        match rec {
            Some(r) if seen.insert(r.paper_id.clone()) => {
                summary.loaded += 1;
                records.push(r);
            }
            _ => summary.skipped += 1,
        }
    }
    Ok((records, summary))
}

/// A document to recommend citations for: sentences plus its reference list.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryDocument {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
    pub references: Vec<ReferenceEntry>,
}

impl QueryDocument {
    pub fn from_record(rec: &PaperRecord) -> Self {
        QueryDocument {
            doc_id: rec.paper_id.clone(),
            sentences: rec.sentences(),
            references: rec.references.clone(),
        }
    }

    /// Builds a document from plain text with no citation markup.
    pub fn from_text(doc_id: impl Into<String>, text: &str, references: Vec<ReferenceEntry>) -> Self {
        QueryDocument {
            doc_id: doc_id.into(),
            sentences: segment_sentences(text, &[]),
            references,
        }
    }
}
