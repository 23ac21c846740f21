//! Entity mention extraction and alias merging.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::segment::Sentence;

/// Lowercase nouns that extend a preceding entity run ("Adam optimizer").
const HEAD_NOUNS: &[&str] = &["optimizer", "algorithm", "method", "dataset", "model"];

/// Capitalized words that are document furniture, not entities.
const STOP_HEADS: &[&str] = &[
    "Table",
    "Tables",
    "Figure",
    "Figures",
    "Fig",
    "Figs",
    "Section",
    "Sections",
    "Sect",
    "Eq",
    "Eqs",
    "Equation",
    "Equations",
    "Appendix",
    "Chapter",
];

/// Longest whitespace gap allowed inside one mention. Masked citation
/// markers leave wider gaps, so runs never bridge a marker.
const MAX_RUN_GAP: usize = 2;

/// A mention as reported by an extractor; offsets are character positions
/// in the text handed to the extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMention {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: String,
    pub canonical: String,
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
}

impl EntityMention {
    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

/// Document-wide facts an extractor may consult.
#[derive(Debug, Clone, Default)]
pub struct DocumentContext {
    capitalized_mid_sentence: HashSet<String>,
}

impl DocumentContext {
    pub fn from_sentences(sentences: &[Sentence]) -> Self {
        let mut capitalized_mid_sentence = HashSet::new();
        for s in sentences {
            let text = s.masked_text();
            for tok in tokenize(&text).into_iter().skip(1) {
                if starts_upper(&tok.text) {
                    capitalized_mid_sentence.insert(tok.text);
                }
            }
        }
        DocumentContext {
            capitalized_mid_sentence,
        }
    }

    pub fn is_capitalized_elsewhere(&self, token: &str) -> bool {
        self.capitalized_mid_sentence.contains(token)
    }
}

/// Text to entity-mention provider.
pub trait EntityExtractor: Send + Sync {
    fn extract(&self, text: &str, ctx: &DocumentContext) -> Result<Vec<RawMention>>;
}

/// Deterministic capitalization-driven extractor used when no external
/// provider is configured.
///
/// A token is an entity head when it has an uppercase letter after its
/// first character (`BERT`, `AllenNLP`), when it is capitalized and not
/// sentence-initial, or when it is sentence-initial and capitalized
/// somewhere else in the document. Adjacent heads form one mention, which
/// may absorb one trailing noun from [`HEAD_NOUNS`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineExtractor;

#[derive(Debug, Clone)]
struct Token {
    text: String,
    start: usize,
    end: usize,
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '-' | '+' | '\'' | '\u{2019}' | '_')
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut start = 0;
    for (pos, c) in text.chars().enumerate() {
        if is_token_char(c) {
            if cur.is_empty() {
                start = pos;
            }
            cur.push(c);
        } else if !cur.is_empty() {
            push_token(&mut out, std::mem::take(&mut cur), start);
        }
    }
    if !cur.is_empty() {
        push_token(&mut out, cur, start);
    }
    out
}

fn push_token(out: &mut Vec<Token>, raw: String, start: usize) {
    let lead = raw.chars().take_while(|c| matches!(c, '-' | '\'' | '\u{2019}')).count();
    let text: String = raw.chars().skip(lead).collect();
    let text = text.trim_end_matches(['-', '\'', '\u{2019}']).to_string();
    if text.is_empty() {
        return;
    }
    let start = start + lead;
    let end = start + text.chars().count();
    out.push(Token { text, start, end });
}

fn starts_upper(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_uppercase)
}

fn has_inner_upper(tok: &str) -> bool {
    tok.chars().skip(1).any(char::is_uppercase)
}

impl BaselineExtractor {
    fn is_head(tok: &str, sentence_initial: bool, ctx: &DocumentContext) -> bool {
        if tok.chars().count() < 2 || STOP_HEADS.contains(&tok) {
            return false;
        }
        if has_inner_upper(tok) {
            return true;
        }
        if !starts_upper(tok) {
            return false;
        }
        !sentence_initial || ctx.is_capitalized_elsewhere(tok)
    }
}

impl EntityExtractor for BaselineExtractor {
    fn extract(&self, text: &str, ctx: &DocumentContext) -> Result<Vec<RawMention>> {
        let chars: Vec<char> = text.chars().collect();
        let tokens = tokenize(text);
        let joinable = |a: &Token, b: &Token| {
            let gap = &chars[a.end..b.start];
            gap.len() <= MAX_RUN_GAP && gap.iter().all(|c| c.is_whitespace())
        };

        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            if !Self::is_head(&tokens[i].text, i == 0, ctx) {
                i += 1;
                continue;
            }
            let mut j = i;
            while j + 1 < tokens.len()
                && joinable(&tokens[j], &tokens[j + 1])
                && Self::is_head(&tokens[j + 1].text, false, ctx)
            {
                j += 1;
            }
            if j + 1 < tokens.len()
                && joinable(&tokens[j], &tokens[j + 1])
                && HEAD_NOUNS.contains(&tokens[j + 1].text.as_str())
            {
                j += 1;
            }
            let (start, end) = (tokens[i].start, tokens[j].end);
            out.push(RawMention {
                surface: chars[start..end].iter().collect(),
                start,
                end,
            });
            i = j + 1;
        }
        Ok(out)
    }
}

/// Trims, collapses whitespace runs and strips trailing punctuation.
/// Letter case is preserved. An all-punctuation input yields `""`.
pub fn normalize_surface(surface: &str) -> String {
    let collapsed = surface.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace() || is_unicode_punct(c))
        .to_string()
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2010}'..='\u{2027}' | '\u{3001}' | '\u{3002}' | '\u{00A1}' | '\u{00BF}' | '\u{00B7}'
    )
}

/// Runs `extractor` over one sentence with citation markers masked out.
///
/// Mentions come back left to right, deduplicated on canonical form. A
/// failing extractor yields no mentions and a logged warning.
pub fn extract_entities(
    sentence: &Sentence,
    extractor: &dyn EntityExtractor,
    ctx: &DocumentContext,
) -> Vec<EntityMention> {
    let masked = sentence.masked_text();
    let mut raw = match extractor.extract(&masked, ctx) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("entity extraction failed for sentence {}: {e}", sentence.index);
            return Vec::new();
        }
    };
    raw.sort_by_key(|m| (m.start, m.end));
    let mut seen = HashSet::new();
    raw.into_iter()
        .filter_map(|m| {
            let canonical = normalize_surface(&m.surface);
            if canonical.is_empty() || !seen.insert(canonical.clone()) {
                return None;
            }
            Some(EntityMention {
                surface: m.surface,
                canonical,
                sentence_index: sentence.index,
                start: m.start,
                end: m.end,
            })
        })
        .collect()
}

fn token_lcs<'a>(a: &[&'a str], b: &[&'a str]) -> Vec<&'a str> {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i][j] = if a[i] == b[j] {
                dp[i + 1][j + 1] + 1
            } else {
                dp[i + 1][j].max(dp[i][j + 1])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(dp[0][0]);
    while i < n && j < m {
        if a[i] == b[j] {
            out.push(a[i]);
            i += 1;
            j += 1;
        } else if dp[i + 1][j] >= dp[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Merges surface forms that share a top recommended paper.
///
/// The group's whitespace-token LCS (folded pairwise over the sorted
/// members) becomes the merged key for every member. When it is empty each
/// member keeps its own canonical form.
pub fn merge_aliases<S: AsRef<str>>(group: &[S]) -> BTreeMap<String, String> {
    let mut members: Vec<&str> = group.iter().map(AsRef::as_ref).collect();
    members.sort_unstable();
    members.dedup();
    let Some((first, rest)) = members.split_first() else {
        return BTreeMap::new();
    };
    let mut common: Vec<&str> = first.split_whitespace().collect();
    for m in rest {
        let toks: Vec<&str> = m.split_whitespace().collect();
        common = token_lcs(&common, &toks);
        if common.is_empty() {
            break;
        }
    }
    let merged = common.join(" ");
    members
        .into_iter()
        .map(|m| {
            let key = if merged.is_empty() {
                m.to_string()
            } else {
                merged.clone()
            };
            (m.to_string(), key)
        })
        .collect()
}
