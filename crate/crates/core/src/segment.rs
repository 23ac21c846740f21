//! Rule-based sentence segmentation that keeps citation spans intact.
//!
//! A boundary follows `.`, `?` or `!` when the next characters are
//! whitespace and then an uppercase letter or a digit. Known abbreviations
//! and single-letter initials never end a sentence, and no boundary may fall
//! inside a citation span.

use serde::{Deserialize, Serialize};

use crate::corpus::CitationSpan;

const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "al.", "fig.", "figs.", "eq.", "eqs.", "vs.", "cf.", "sec.", "sect.", "no.", "nos.", "approx.",
    "resp.", "ref.", "refs.", "dr.", "mr.", "mrs.", "ms.", "prof.", "ch.", "tab.", "vol.", "pp.",
];

/// A citation inside a sentence, with offsets relative to the sentence text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceCitation {
    pub target: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    /// 1-based position within the document.
    pub index: usize,
    pub text: String,
    /// Character offset of `text` within the body it was cut from.
    pub offset: usize,
    pub citations: Vec<SentenceCitation>,
}

impl Sentence {
    pub fn new(index: usize, text: impl Into<String>) -> Self {
        Sentence {
            index,
            text: text.into(),
            offset: 0,
            citations: Vec::new(),
        }
    }

    /// Distinct cited paper ids in order of first appearance.
    pub fn cited_papers(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.citations {
            if !out.contains(&c.target.as_str()) {
                out.push(&c.target);
            }
        }
        out
    }

    /// Sentence text with every citation marker blanked to spaces.
    ///
    /// Character offsets are unchanged, so mentions found in the masked text
    /// line up with the original.
    pub fn masked_text(&self) -> String {
        if self.citations.is_empty() {
            return self.text.clone();
        }
        self.text
            .chars()
            .enumerate()
            .map(|(i, c)| {
                if self.citations.iter().any(|s| s.start <= i && i < s.end) {
                    ' '
                } else {
                    c
                }
            })
            .collect()
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

fn is_abbreviation(chars: &[char], dot: usize) -> bool {
    let start = chars[..dot]
        .iter()
        .rposition(|c| c.is_whitespace())
        .map_or(0, |p| p + 1);
    let token: String = chars[start..=dot].iter().collect::<String>().to_lowercase();
    let token = token.trim_start_matches(['(', '[', '"', '\'']);
    if ABBREVIATIONS.contains(&token) {
        return true;
    }
    // Single-letter initial such as "J. Smith".
    let word = &chars[start..dot];
    word.len() == 1 && word[0].is_uppercase()
}

/// Splits `body` into sentences and assigns each citation span to the
/// sentence containing its start offset.
pub fn segment_sentences(body: &str, spans: &[CitationSpan]) -> Vec<Sentence> {
    let chars: Vec<char> = body.chars().collect();
    let n = chars.len();
    let inside_span = |pos: usize| spans.iter().any(|s| s.start < pos && pos < s.end);

    let mut cuts = Vec::new();
    for i in 0..n {
        if !is_terminal(chars[i]) {
            continue;
        }
        let cut = i + 1;
        if cut >= n || !chars[cut].is_whitespace() {
            continue;
        }
        let next = match chars[cut..].iter().position(|c| !c.is_whitespace()) {
            Some(p) => chars[cut + p],
            None => continue,
        };
        if !(next.is_uppercase() || next.is_ascii_digit()) {
            continue;
        }
        if chars[i] == '.' && is_abbreviation(&chars, i) {
            continue;
        }
        if inside_span(cut) || spans.iter().any(|s| s.start <= i && i < s.end) {
            continue;
        }
        cuts.push(cut);
    }
    cuts.push(n);

    let mut sentences = Vec::new();
    let mut seg_start = 0;
    for cut in cuts {
        let seg = &chars[seg_start..cut];
        let lead = seg.iter().take_while(|c| c.is_whitespace()).count();
        let trail = seg.iter().rev().take_while(|c| c.is_whitespace()).count();
        if lead < seg.len() {
            let text_start = seg_start + lead;
            let text_end = cut - trail;
            let citations = spans
                .iter()
                .filter(|s| seg_start <= s.start && s.start < cut)
                .map(|s| SentenceCitation {
                    target: s.target_paper_id.clone(),
                    start: s.start.max(text_start) - text_start,
                    end: s.end.min(text_end).max(s.start.max(text_start)) - text_start,
                })
                .collect();
            sentences.push(Sentence {
                index: sentences.len() + 1,
                text: chars[text_start..text_end].iter().collect(),
                offset: text_start,
                citations,
            });
        }
        seg_start = cut;
    }
    sentences
}
