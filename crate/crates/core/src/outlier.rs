//! Outlier entity filtering.
//!
//! Frequent surnames and common words pick up citations to many unrelated
//! papers and show a flat cooccurrence curve; published entities show one
//! dominant source paper and a sharp drop. A random forest over the
//! max-normalized, descending count curve separates the two.

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{ForestParams, RandomForest};
use crate::index::{parse_header, MappingDataset};
use crate::par::{self, Execution};

pub const DEFAULT_FEATURE_LEN: usize = 50;
pub const DEFAULT_SURNAMES: usize = 10_000;
pub const DEFAULT_WORDS: usize = 14_000;
pub const MODEL_MAGIC: &str = "CRPSE-RF";
pub const MODEL_VERSION: u32 = 1;
pub const MIN_TRAINING_SAMPLES: usize = 10;

/// Sorted, max-normalized cooccurrence curve of fixed length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Sorts counts in descending order, truncates or zero-pads to `len` and
/// divides by the largest count.
pub fn build_feature(counts: &[u64], len: usize) -> Result<FeatureVector> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("cooccurrence counts"));
    }
    if counts.contains(&0) {
        return Err(Error::InvalidArgument("cooccurrence counts must be >= 1".into()));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let max = sorted[0] as f64;
    let mut values: Vec<f64> = sorted.iter().take(len).map(|&c| c as f64 / max).collect();
    values.resize(len, 0.0);
    Ok(FeatureVector(values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    /// Positive class: a frequent term with no single source paper.
    Outlier,
    /// Negative class: a published entity.
    Published,
}

impl Label {
    pub fn is_outlier(self) -> bool {
        self == Label::Outlier
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub entity: String,
    pub feature: FeatureVector,
    pub label: Label,
}

/// Reads a `<token>\t<frequency>` list, keeping file order.
pub fn read_frequency_list(path: impl AsRef<Path>) -> Result<Vec<(String, u64)>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (tok, freq) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected <token>\\t<frequency>: {line:?}"),
        })?;
        let freq = freq.trim().parse().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("bad frequency {freq:?}"),
        })?;
        out.push((tok.trim().to_string(), freq));
    }
    Ok(out)
}

fn fold(s: &str) -> String {
    s.to_lowercase()
}

/// Top surnames plus top words not colliding with a surname.
///
/// Inputs must already be sorted by descending frequency. Comparison
/// between the two lists is case-insensitive.
pub fn build_positive_samples<S: AsRef<str>>(
    surnames: &[S],
    words: &[S],
    n_surnames: usize,
    n_words: usize,
) -> Vec<String> {
    if surnames.is_empty() && words.is_empty() {
        log::warn!("no surname or word lists given; no positive samples");
        return Vec::new();
    }
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(n_surnames + n_words);
    for s in surnames.iter().map(AsRef::as_ref) {
        if out.len() == n_surnames {
            break;
        }
        if seen.insert(fold(s)) {
            out.push(s.to_string());
        }
    }
    let surname_count = out.len();
    let surname_set = seen.clone();
    let mut taken = 0;
    for w in words.iter().map(AsRef::as_ref) {
        if taken == n_words {
            break;
        }
        let key = fold(w);
        if surname_set.contains(&key) || !seen.insert(key) {
            continue;
        }
        out.push(w.to_string());
        taken += 1;
    }
    if surname_count < n_surnames || taken < n_words {
        log::warn!("positive samples short of target: {surname_count}/{n_surnames} surnames, {taken}/{n_words} words");
    }
    out
}

/// Single-token prefixes of `Token: rest` titles that are neither
/// surnames nor common words, deduplicated in order of appearance.
pub fn build_negative_samples<S: AsRef<str>>(
    titles: &[S],
    surname_set: &HashSet<String>,
    word_set: &HashSet<String>,
) -> Vec<String> {
    let surnames: HashSet<String> = surname_set.iter().map(|s| fold(s)).collect();
    let words: HashSet<String> = word_set.iter().map(|s| fold(s)).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for title in titles.iter().map(AsRef::as_ref) {
        let Some((head, _)) = title.split_once(':') else {
            continue;
        };
        let mut toks = head.split_whitespace();
        let (Some(tok), None) = (toks.next(), toks.next()) else {
            continue;
        };
        let key = fold(tok);
        if surnames.contains(&key) || words.contains(&key) {
            continue;
        }
        if seen.insert(tok.to_string()) {
            out.push(tok.to_string());
        }
    }
    out
}

/// Attaches dataset features to sample strings. Strings missing from the
/// dataset are dropped. Positive strings match case-insensitively because
/// word lists are lowercase while extracted mentions keep their case.
pub fn label_samples<S: AsRef<str>>(
    ds: &MappingDataset,
    positives: &[S],
    negatives: &[S],
    feature_len: usize,
) -> Vec<LabeledSample> {
    let pos_keys: HashSet<String> = positives.iter().map(|s| fold(s.as_ref())).collect();
    let neg_keys: HashSet<&str> = negatives.iter().map(AsRef::as_ref).collect();
    let mut out = Vec::new();
    for (entity, set) in &ds.entries {
        let label = if neg_keys.contains(entity.as_str()) {
            Label::Published
        } else if pos_keys.contains(&fold(entity)) {
            Label::Outlier
        } else {
            continue;
        };
        let feature = build_feature(&set.counts(), feature_len).expect("dataset candidate sets are non-empty");
        out.push(LabeledSample {
            entity: entity.clone(),
            feature,
            label,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// 8:1:1 split sizes; the test set absorbs rounding.
pub fn split_sizes(n: usize) -> SplitSizes {
    let train = n * 8 / 10;
    let validation = n / 10;
    SplitSizes {
        train,
        validation,
        test: n - train - validation,
    }
}

/// F1 of the positive (outlier) class. With no positives predicted or
/// present the classifier made no positive-class error and F1 is 1.
pub fn f1_score(predicted: &[bool], truth: &[bool]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fne = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            _ => {}
        }
    }
    if tp + fp + fne == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fne) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub forest: RandomForest,
    pub feature_len: usize,
    pub seed: u64,
    pub split: SplitSizes,
}

impl ClassifierModel {
    pub fn is_outlier(&self, feature: &FeatureVector) -> bool {
        self.forest.predict(feature.values())
    }

    pub fn classify_counts(&self, counts: &[u64]) -> Result<bool> {
        Ok(self.is_outlier(&build_feature(counts, self.feature_len)?))
    }

    pub fn to_text(&self) -> String {
        let body = serde_json::to_string(self).expect("model serialization cannot fail");
        format!("{MODEL_MAGIC} v{MODEL_VERSION}\n{body}\n")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, body) = text.split_once('\n').ok_or_else(|| Error::Parse {
            line: 1,
            msg: "missing model header".into(),
        })?;
        parse_header(header, MODEL_MAGIC, MODEL_VERSION)?;
        serde_json::from_str(body.trim_end()).map_err(|e| Error::Parse {
            line: 2,
            msg: format!("model body: {e}"),
        })
    }
}

pub fn save_model(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    crate::fsutil::write_atomic(path, model.to_text().as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClassifierModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ClassifierModel::from_text(&text)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    /// Candidate (tree count, max depth) settings, tried in order; the
    /// first one wins validation ties.
    pub grid: Vec<(usize, Option<usize>)>,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            grid: vec![(100, None), (50, None), (100, Some(8)), (25, None), (100, Some(4))],
            exec: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: ClassifierModel,
    pub validation_f1: f64,
    pub test_f1: f64,
    pub n_trees: usize,
    pub max_depth: Option<usize>,
}

/// Shuffles with `cfg.seed`, splits 8:1:1, fits one forest per grid entry
/// on the training part, keeps the best on validation and scores it on the
/// held-out test part.
pub fn train(samples: &[LabeledSample], cfg: &TrainConfig) -> Result<TrainReport> {
    if samples.len() < MIN_TRAINING_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_TRAINING_SAMPLES,
            got: samples.len(),
        });
    }
    let n_pos = samples.iter().filter(|s| s.label.is_outlier()).count();
    if n_pos == 0 || n_pos == samples.len() {
        return Err(Error::DegenerateLabels);
    }
    let feature_len = samples[0].feature.0.len();
    if samples.iter().any(|s| s.feature.0.len() != feature_len) {
        return Err(Error::InvalidArgument("samples have mixed feature lengths".into()));
    }
    if cfg.grid.is_empty() {
        return Err(Error::InvalidArgument("empty hyper-parameter grid".into()));
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let split = split_sizes(samples.len());
    let (train_idx, rest) = order.split_at(split.train);
    let (val_idx, test_idx) = rest.split_at(split.validation);

    let xy = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
        idx.iter()
            .map(|&i| (samples[i].feature.0.clone(), samples[i].label.is_outlier()))
            .unzip()
    };
    let (x_train, y_train) = xy(train_idx);
    let (x_val, y_val) = xy(val_idx);
    let (x_test, y_test) = xy(test_idx);

    let mut best: Option<(RandomForest, f64, usize, Option<usize>)> = None;
    for &(n_trees, max_depth) in &cfg.grid {
        let params = ForestParams {
            n_trees,
            max_depth,
            seed: cfg.seed,
            ..Default::default()
        };
        let forest = RandomForest::fit(&x_train, &y_train, params, cfg.exec);
        let pred: Vec<bool> = x_val.iter().map(|x| forest.predict(x)).collect();
        let f1 = f1_score(&pred, &y_val);
        if best.as_ref().is_none_or(|b| f1 > b.1) {
            best = Some((forest, f1, n_trees, max_depth));
        }
    }
    let (forest, validation_f1, n_trees, max_depth) = best.expect("grid is non-empty");
    let pred: Vec<bool> = x_test.iter().map(|x| forest.predict(x)).collect();
    let test_f1 = f1_score(&pred, &y_test);
    Ok(TrainReport {
        model: ClassifierModel {
            forest,
            feature_len,
            seed: cfg.seed,
            split,
        },
        validation_f1,
        test_f1,
        n_trees,
        max_depth,
    })
}

/// Removes every entity the model classifies as an outlier.
pub fn filter_dataset(ds: &MappingDataset, model: &ClassifierModel, exec: Execution) -> MappingDataset {
    let entries: Vec<(&String, &crate::index::CandidateSet)> = ds.entries.iter().collect();
    let keep = par::map(exec, &entries, |(_, set)| {
        !model
            .classify_counts(&set.counts())
            .expect("dataset candidate sets are non-empty")
    });
    let mut out = MappingDataset::empty(ds.meta.threshold);
    for ((entity, set), keep) in entries.into_iter().zip(keep) {
        if keep {
            out.insert(entity.clone(), set.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::CandidateSet;
    use proptest::prelude::*;

    #[test]
    fn feature_examples() {
        let f = build_feature(&[100], 8).unwrap();
        assert_eq!(f.0, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let f = build_feature(&[30, 30, 30], 8).unwrap();
        assert_eq!(f.0, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let f = build_feature(&[5, 100, 5], 8).unwrap();
        assert_eq!(f.0, vec![1.0, 0.05, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(build_feature(&[], 8).is_err());
        assert_eq!(build_feature(&[9; 70], 50).unwrap().0.len(), 50);
    }

    proptest! {
        #[test]
        fn feature_is_scale_invariant(counts in proptest::collection::vec(1u64..1000, 1..80), k in 1u64..50) {
            let a = build_feature(&counts, DEFAULT_FEATURE_LEN).unwrap();
            let scaled: Vec<u64> = counts.iter().map(|c| c * k).collect();
            let b = build_feature(&scaled, DEFAULT_FEATURE_LEN).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.0.len(), DEFAULT_FEATURE_LEN);
            prop_assert_eq!(a.0[0], 1.0);
            prop_assert!(a.0.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(a.0.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn positives_screen_surname_collisions() {
        let surnames: Vec<String> = (0..10).map(|i| format!("Sur{i}")).collect();
        let mut words: Vec<String> = (0..12).map(|i| format!("word{i}")).collect();
        words.insert(3, "sur2".into());
        words.insert(7, "SUR5".into());
        assert_eq!(words.len(), 14);
        let pos = build_positive_samples(&surnames, &words, DEFAULT_SURNAMES, DEFAULT_WORDS);
        // Set-difference oracle.
        let sur_lc: HashSet<String> = surnames.iter().map(|s| s.to_lowercase()).collect();
        let expected = surnames.len() + words.iter().filter(|w| !sur_lc.contains(&w.to_lowercase())).count();
        assert_eq!(expected, 22);
        assert_eq!(pos.len(), 22);
    }

    #[test]
    fn positives_take_next_words_after_collisions() {
        let surnames: Vec<String> = (0..100).map(|i| format!("s{i}")).collect();
        let mut words: Vec<String> = (0..50).map(|i| format!("s{i}")).collect();
        words.extend((0..300).map(|i| format!("w{i}")));
        let pos = build_positive_samples(&surnames, &words, 100, 200);
        assert_eq!(pos.len(), 300);
        assert_eq!(pos.last().unwrap(), "w199");
        assert!(!pos[100..].iter().any(|w| w.starts_with('s')));
    }

    #[test]
    fn positives_full_size() {
        let surnames: Vec<String> = (0..12_000).map(|i| format!("S{i}")).collect();
        let words: Vec<String> = (0..20_000).map(|i| format!("w{i}")).collect();
        let pos = build_positive_samples(&surnames, &words, DEFAULT_SURNAMES, DEFAULT_WORDS);
        assert_eq!(pos.len(), 24_000);
    }

    #[test]
    fn positives_empty() {
        let empty: Vec<String> = Vec::new();
        assert!(build_positive_samples(&empty, &empty, 10, 10).is_empty());
    }

    #[test]
    fn negatives_from_titles() {
        let titles = [
            "AllenNLP: A Deep Semantic Natural Language Processing Platform",
            "VoxCeleb2: Deep Speaker Recognition",
            "Making the V in VQA Matter: Elevating the Role of Image Understanding",
            "Smith: A Surname",
            "Attention: Common Word",
            "AllenNLP: duplicate",
            "No colon here",
        ];
        let surnames: HashSet<String> = ["Smith".to_string()].into();
        let words: HashSet<String> = ["attention".to_string()].into();
        assert_eq!(
            build_negative_samples(&titles, &surnames, &words),
            vec!["AllenNLP", "VoxCeleb2"]
        );
    }

    fn ds_with(entries: &[(&str, &[u64])]) -> MappingDataset {
        let mut ds = MappingDataset::empty(1);
        for (e, counts) in entries {
            let set = CandidateSet::new(counts.iter().enumerate().map(|(i, c)| (format!("P{i}"), *c))).unwrap();
            ds.insert(*e, set);
        }
        ds
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(
            split_sizes(36_000),
            SplitSizes {
                train: 28_800,
                validation: 3_600,
                test: 3_600
            }
        );
        assert_eq!(
            split_sizes(400),
            SplitSizes {
                train: 320,
                validation: 40,
                test: 40
            }
        );
        assert_eq!(
            split_sizes(10),
            SplitSizes {
                train: 8,
                validation: 1,
                test: 1
            }
        );
    }

    #[test]
    fn degenerate_and_small_inputs() {
        let s = |label| LabeledSample {
            entity: "x".into(),
            feature: build_feature(&[1], 4).unwrap(),
            label,
        };
        let one_class: Vec<_> = (0..20).map(|_| s(Label::Outlier)).collect();
        assert!(matches!(
            train(&one_class, &TrainConfig::default()),
            Err(Error::DegenerateLabels)
        ));
        let few: Vec<_> = (0..4)
            .map(|i| s(if i % 2 == 0 { Label::Outlier } else { Label::Published }))
            .collect();
        assert!(matches!(
            train(&few, &TrainConfig::default()),
            Err(Error::TooFewSamples { .. })
        ));
    }

    fn toy_model(seed: u64) -> ClassifierModel {
        let mut samples = Vec::new();
        for i in 0..40u64 {
            samples.push(LabeledSample {
                entity: format!("flat{i}"),
                feature: build_feature(&[30 + i % 3; 12], 8).unwrap(),
                label: Label::Outlier,
            });
            samples.push(LabeledSample {
                entity: format!("peak{i}"),
                feature: build_feature(&[100 + i, 3, 2, 1], 8).unwrap(),
                label: Label::Published,
            });
        }
        let cfg = TrainConfig {
            seed,
            grid: vec![(20, None)],
            exec: Execution::Sequential,
        };
        train(&samples, &cfg).unwrap().model
    }

    #[test]
    fn filter_keeps_peaked_entity() {
        let model = toy_model(1);
        let ds = ds_with(&[
            ("BLEU", &[300, 12, 8, 5, 2]),
            ("CPU", &[25, 24, 24, 23, 22, 22, 21, 20]),
        ]);
        let out = filter_dataset(&ds, &model, Execution::Sequential);
        assert_eq!(out.entries.keys().collect::<Vec<_>>(), vec!["BLEU"]);
        assert_eq!(out.get("BLEU"), ds.get("BLEU"));
        assert!(filter_dataset(&MappingDataset::empty(1), &model, Execution::Sequential).is_empty());
        let peaked_only = ds_with(&[("BLEU", &[300, 12, 8])]);
        assert_eq!(filter_dataset(&peaked_only, &model, Execution::Parallel), peaked_only);
    }

    #[test]
    fn model_text_round_trip_and_version() {
        let model = toy_model(2);
        let text = model.to_text();
        assert!(text.starts_with("CRPSE-RF v1\n"));
        assert_eq!(ClassifierModel::from_text(&text).unwrap(), model);
        let bumped = text.replacen("v1", "v7", 1);
        assert!(matches!(
            ClassifierModel::from_text(&bumped),
            Err(Error::VersionMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn label_samples_matches_dataset() {
        let ds = ds_with(&[("Smith", &[20, 19]), ("AllenNLP", &[40, 2]), ("Other", &[20])]);
        let samples = label_samples(&ds, &["smith"], &["AllenNLP", "Missing"], 8);
        let labels: Vec<(&str, Label)> = samples.iter().map(|s| (s.entity.as_str(), s.label)).collect();
        assert_eq!(labels, vec![("AllenNLP", Label::Published), ("Smith", Label::Outlier)]);
    }
}
