//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use crpse_core::corpus::{RawRecord, RawSpan, ReferenceEntry};
use crpse_core::dmc::{age_stats, dmc, ReferenceSet};
use crpse_core::eval::{map, mrr, recall_at_k, MetricsReport, RankedQuery};
use crpse_core::index::{apply_threshold, Accumulator, CandidateSet, MappingDataset};
use crpse_core::outlier::{build_feature, train, Label, LabeledSample, TrainConfig, DEFAULT_FEATURE_LEN};
use crpse_core::ranking::{
    count_score, mixed_score, rank_candidates, ContextScorer, Criterion, HashedEmbedder, MetadataStore, PaperMetadata,
    RankingConfig,
};
use crpse_core::synth::{generate_synthetic_corpus, SynthSpec};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const COUNT_TOL: f64 = 1e-9;
const METRIC_TOL: f64 = 1e-12;
const COUNT_BUDGET: Duration = Duration::from_secs(5);
const PIPELINE_BUDGET: Duration = Duration::from_secs(60);
const RECALL5_FLOOR: f64 = 0.95;
const F1_FLOOR: f64 = 0.95;

fn random_set(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<(String, u64)> {
    let n = rng.random_range(1..=max_len);
    (0..n)
        .map(|i| (format!("p{i:03}"), rng.random_range(1..10_000)))
        .collect()
}

fn argmax(scores: &[(String, f64)]) -> &str {
    let mut best = &scores[0];
    for s in scores {
        if s.1 > best.1 || (s.1 == best.1 && s.0 < best.0) {
            best = s;
        }
    }
    &best.0
}

fn count_normalization() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let pairs = random_set(&mut rng, 60);
        let set = CandidateSet::new(pairs.clone()).map_err(|e| e.to_string())?;
        let scores = count_score(&set);
        let sum: f64 = scores.iter().map(|s| s.1).sum();
        worst = worst.max((sum - 1.0).abs());
        ensure!(
            (sum - 1.0).abs() <= COUNT_TOL,
            "sum {sum} for {} candidates",
            pairs.len()
        );

        let c = rng.random_range(2..1000u64);
        let scaled = CandidateSet::new(pairs.iter().map(|(p, n)| (p.clone(), n * c))).map_err(|e| e.to_string())?;
        let a = argmax(&scores).to_string();
        let b = argmax(&count_score(&scaled)).to_string();
        ensure!(a == b, "argmax changed from {a} to {b} under scale {c}");
    }
    let t = start.elapsed();
    ensure!(t < COUNT_BUDGET, "took {t:?}");
    Ok(format!("1000 sets, max |sum-1| = {worst:.1e}, {t:.2?}"))
}

fn lambda_endpoints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..100 {
        let (wc, wx): (f64, f64) = (rng.random_range(0.0..=1.0), rng.random_range(-1.0..=1.0));
        ensure!(
            mixed_score(wc, wx, 1.0) == wc,
            "lambda=1 gave {} for w_count {wc}",
            mixed_score(wc, wx, 1.0)
        );
        ensure!(
            mixed_score(wc, wx, 0.0) == wx,
            "lambda=0 gave {} for w_context {wx}",
            mixed_score(wc, wx, 0.0)
        );
    }
    let words = [
        "graph", "neural", "parsing", "vision", "speech", "kernel", "sparse", "language",
    ];
    let embedder = HashedEmbedder::default();
    for t in 0..50 {
        let pairs = random_set(&mut rng, 12);
        let mut ds = MappingDataset::empty(1);
        ds.insert("E", CandidateSet::new(pairs.clone()).map_err(|e| e.to_string())?);
        let meta: MetadataStore = pairs
            .iter()
            .map(|(p, _)| PaperMetadata {
                paper_id: p.clone(),
                title: (0..4)
                    .map(|_| *words.choose(&mut rng).unwrap())
                    .collect::<Vec<_>>()
                    .join(" "),
                abstract_text: String::new(),
                year: None,
            })
            .collect();
        let scorer = ContextScorer::new(&embedder, &meta);
        let sentence = format!("E improves {} {}", words[t % 8], words[(t * 3) % 8]);
        let k = pairs.len();
        let ids = |cfg: &RankingConfig, s: Option<&ContextScorer<'_>>| -> Result<Vec<String>, String> {
            Ok(rank_candidates("E", &sentence, &ds, cfg, s)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|c| c.paper_id)
                .collect())
        };
        let count = ids(&RankingConfig::new(Criterion::Count, 0.7, k).unwrap(), None)?;
        let mixed = ids(&RankingConfig::new(Criterion::Mixed, 1.0, k).unwrap(), Some(&scorer))?;
        ensure!(count == mixed, "set {t}: {count:?} vs {mixed:?}");
    }
    Ok("100 pairs exact at both ends; 50 rankings identical at lambda=1".into())
}

fn dmc_truth_table() -> Outcome {
    let mut ds = MappingDataset::empty(20);
    ds.insert("Known", CandidateSet::new([("top", 30u64), ("second", 10)]).unwrap());
    let meta: MetadataStore = [("top", "Known: A Method For Things"), ("second", "Another Paper")]
        .into_iter()
        .map(|(id, title)| PaperMetadata {
            paper_id: id.into(),
            title: title.into(),
            abstract_text: String::new(),
            year: Some(2015),
        })
        .collect();
    let cfg = RankingConfig::default();
    let mut rows = 0;
    for in_dataset in [false, true] {
        for by_id in [false, true] {
            for by_title in [false, true] {
                for other_ref in [false, true] {
                    let mut refs = Vec::new();
                    if by_id {
                        refs.push(ReferenceEntry::new("top", ""));
                    }
                    if by_title {
                        refs.push(ReferenceEntry::new("", "known - a method for things."));
                    }
                    if other_ref {
                        refs.push(ReferenceEntry::new("second", "Another Paper"));
                    }
                    let entity = if in_dataset { "Known" } else { "Unknown" };
                    let got = dmc(
                        entity,
                        "We use it.",
                        &ds,
                        &ReferenceSet::from_entries(&refs),
                        &cfg,
                        None,
                        &meta,
                    )
                    .map_err(|e| e.to_string())?
                    .map(|c| c.paper_id);
                    let expected = (in_dataset && !by_id && !by_title).then(|| "top".to_string());
                    ensure!(
                        got == expected,
                        "in_dataset={in_dataset} by_id={by_id} by_title={by_title} other={other_ref}: {got:?}"
                    );
                    rows += 1;
                }
            }
        }
    }
    Ok(format!("{rows} membership combinations"))
}

fn threshold_boundary() -> Outcome {
    let mut acc = Accumulator::new();
    acc.add("Below", "a", 19);
    acc.add("Below", "b", 7);
    acc.add("Exact", "c", 20);
    acc.add("Exact", "d", 3);
    acc.add("Exact", "e", 1);
    let ds = apply_threshold(&acc, 20).map_err(|e| e.to_string())?;
    ensure!(!ds.contains("Below"), "max 19 retained");
    let set = ds.get("Exact").ok_or("max 20 removed")?;
    let got: Vec<(String, u64)> = set.candidates().to_vec();
    let want = vec![("c".to_string(), 20), ("d".to_string(), 3), ("e".to_string(), 1)];
    ensure!(got == want, "candidates {got:?}");
    let back = MappingDataset::from_text(&ds.to_text()).map_err(|e| e.to_string())?;
    ensure!(back == ds, "dataset changed on reload");
    Ok("19 removed, 20 kept with counts 20/3/1".into())
}

fn crpse(dir: &Path, args: &[&str]) -> Result<Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crpse"))
        .args(args)
        .current_dir(dir)
        .env_remove("CRPSE_PROVIDER_URL")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`crpse {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(out)
}

fn metrics_json(out: &Output) -> Result<serde_json::Value, String> {
    serde_json::from_slice(&out.stdout).map_err(|e| format!("bad eval output: {e}"))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let mut detail = Vec::new();
    for (rate, name) in [("0", "clean"), ("0.2", "noisy")] {
        crpse(
            dir,
            &[
                "synth",
                "--out",
                name,
                "--seed",
                "11",
                "--entities",
                "200",
                "--distractor-rate",
                rate,
            ],
        )?;
        let corpus = format!("{name}/corpus.jsonl");
        let ds = format!("{name}.ds");
        let filtered = format!("{name}.filtered.ds");
        crpse(dir, &["build", "--corpus", &corpus, "--out", &ds, "--threshold", "20"])?;
        crpse(
            dir,
            &[
                "train-filter",
                "--dataset",
                &ds,
                "--out",
                &filtered,
                "--surnames",
                &format!("{name}/surnames.tsv"),
                "--titles",
                &format!("{name}/metadata.jsonl"),
                "--seed",
                "11",
            ],
        )?;
        let m = metrics_json(&crpse(
            dir,
            &[
                "eval",
                "--json",
                "--gold",
                &format!("{name}/gold.jsonl"),
                "--dataset",
                &filtered,
            ],
        )?)?;
        let (r1, r5, rr, n) = (
            m["recall@1"].as_f64(),
            m["recall@5"].as_f64(),
            m["mrr"].as_f64(),
            m["n"].as_u64(),
        );
        ensure!(n == Some(200), "{name}: n = {n:?}");
        if rate == "0" {
            ensure!(r1 == Some(1.0) && rr == Some(1.0), "{name}: recall@1 {r1:?} MRR {rr:?}");
            detail.push("rate 0: recall@1 = MRR = 1".to_string());
        } else {
            let r5 = r5.ok_or("missing recall@5")?;
            ensure!(r5 >= RECALL5_FLOOR, "{name}: recall@5 {r5}");
            detail.push(format!("rate 0.2: recall@5 = {r5}"));
        }
    }
    let t = start.elapsed();
    ensure!(t < PIPELINE_BUDGET, "took {t:?}");
    Ok(format!("{}, {t:.2?}", detail.join(", ")))
}

fn classifier_samples(seed: u64) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..400 {
        let flat = i % 2 == 0;
        let counts: Vec<u64> = if flat {
            let base = rng.random_range(20..60);
            (0..rng.random_range(8..40))
                .map(|_| base + rng.random_range(0..5))
                .collect()
        } else {
            let mut c = vec![rng.random_range(100..2000)];
            c.extend((0..rng.random_range(0..30)).map(|_| rng.random_range(1..15)));
            c
        };
        out.push(LabeledSample {
            entity: format!("s{i}"),
            feature: build_feature(&counts, DEFAULT_FEATURE_LEN).unwrap(),
            label: if flat { Label::Outlier } else { Label::Published },
        });
    }
    out.shuffle(&mut rng);
    out
}

fn classifier() -> Outcome {
    let samples = classifier_samples(103);
    let cfg = TrainConfig {
        seed: 42,
        ..Default::default()
    };
    let a = train(&samples, &cfg).map_err(|e| e.to_string())?;
    let b = train(&samples, &cfg).map_err(|e| e.to_string())?;
    let s = a.model.split;
    ensure!((s.train, s.validation, s.test) == (320, 40, 40), "split {s:?}");
    ensure!(a.test_f1 >= F1_FLOOR, "test F1 {}", a.test_f1);
    ensure!(
        a.model.to_text() == b.model.to_text(),
        "retraining with the same seed changed the model"
    );
    Ok(format!("split 320/40/40, test F1 = {:.3}, reproducible", a.test_f1))
}

const BERT_SENTENCE: &str = "BERT, formally published at NAACL-HLT 2019, leads to a significant change of NLP";

fn bert_example() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let listed = [
        ("devlin2019bert", 140u64),
        ("peters2018deep", 64),
        ("vaswani2017attention", 51),
        ("radford2018improving", 33),
        ("yang2019xlnet", 25),
    ];
    let mut ds = MappingDataset::empty(20);
    ds.insert(
        "BERT",
        CandidateSet::new(
            listed
                .iter()
                .copied()
                .chain([("liu2019roberta", 12), ("mikolov2013word", 4)]),
        )
        .unwrap(),
    );
    std::fs::write(dir.join("bert.ds"), ds.to_text()).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("doc.txt"), BERT_SENTENCE).map_err(|e| e.to_string())?;
    let out = crpse(
        dir,
        &[
            "recommend",
            "--json",
            "--k",
            "5",
            "--doc",
            "doc.txt",
            "--dataset",
            "bert.ds",
        ],
    )?;
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure!(lines.len() == 1, "expected one recommended entity, got {}", lines.len());
    ensure!(lines[0]["entity"] == "BERT", "entity {}", lines[0]["entity"]);
    let ids: Vec<&str> = lines[0]["candidates"]
        .as_array()
        .ok_or("no candidates")?
        .iter()
        .filter_map(|c| c["paper_id"].as_str())
        .collect();
    let want: Vec<&str> = listed.iter().map(|(p, _)| *p).collect();
    ensure!(ids == want, "order {ids:?}");
    Ok(ids.join(" > "))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for f in 0..50 {
        let n = rng.random_range(1..40);
        let qs: Vec<RankedQuery> = (0..n)
            .map(|_| {
                let len = rng.random_range(0..20);
                let mut ranked: Vec<String> = (0..len).map(|i| format!("p{i}")).collect();
                ranked.shuffle(&mut rng);
                RankedQuery {
                    ranked,
                    gold: format!("p{}", rng.random_range(0..20)),
                }
            })
            .collect();
        let mut hits = [0usize; 3];
        let mut rr = 0.0;
        let mut ap = 0.0;
        for q in &qs {
            let mut rank = 0;
            for (i, p) in q.ranked.iter().enumerate() {
                if *p == q.gold {
                    rank = i + 1;
                    break;
                }
            }
            if rank > 0 {
                for (h, k) in hits.iter_mut().zip([1, 5, 10]) {
                    *h += usize::from(rank <= k);
                }
                rr += 1.0 / rank as f64;
                let mut found = 0.0;
                let mut prec_sum = 0.0;
                for (i, p) in q.ranked.iter().enumerate() {
                    if *p == q.gold {
                        found += 1.0;
                        prec_sum += found / (i + 1) as f64;
                        break;
                    }
                }
                ap += prec_sum;
            }
        }
        let nq = qs.len() as f64;
        let mut diffs = vec![(mrr(&qs).unwrap() - rr / nq).abs(), (map(&qs).unwrap() - ap / nq).abs()];
        for (h, k) in hits.iter().zip([1, 5, 10]) {
            diffs.push((recall_at_k(&qs, k).unwrap() - *h as f64 / nq).abs());
        }
        let d = diffs.iter().cloned().fold(0.0, f64::max);
        worst = worst.max(d);
        ensure!(d <= METRIC_TOL, "fixture {f}: deviation {d:e}");
        let r = MetricsReport::from_queries(&qs).unwrap();
        ensure!(
            r.recall_at_1 <= r.recall_at_5 && r.recall_at_5 <= r.recall_at_10,
            "fixture {f}: recall not monotone {r:?}"
        );
    }
    Ok(format!("50 fixtures, max deviation {worst:.1e}"))
}

fn age_statistics() -> Outcome {
    let baseline = 2020;
    let single = age_stats(&[baseline - 5], baseline).map_err(|e| e.to_string())?;
    ensure!(
        (single.max, single.min, single.mode, single.mean, single.median) == (5, 5, 5, 5.0, 5.0),
        "[5] gave {single:?}"
    );
    let years: Vec<i32> = [1, 2, 2, 79].iter().map(|a| baseline - a).collect();
    let s = age_stats(&years, baseline).map_err(|e| e.to_string())?;
    ensure!(
        (s.max, s.min, s.mode, s.mean, s.median) == (79, 1, 2, 21.0, 2.0),
        "[1,2,2,79] gave {s:?}"
    );
    Ok("[5] -> 5/5/5/5/5; [1,2,2,79] -> max 79 min 1 mode 2 mean 21.0 median 2.0".into())
}

fn planted_doc(entities: &[String], sources: &[String]) -> String {
    let (e0, e1) = (&entities[0], &entities[1]);
    let before = format!("We compare {e0} against {e1} ");
    let start = before.chars().count();
    let body = format!("{before}[1] on two tasks. Both are strong.");
    let raw = RawRecord {
        paper_id: "planted".into(),
        title: "planted".into(),
        body,
        citation_spans: vec![RawSpan {
            start,
            end: start + 3,
            target: Some(sources[1].clone()),
        }],
        references: vec![ReferenceEntry::new(sources[1].clone(), "")],
        ..Default::default()
    };
    serde_json::to_string(&raw).unwrap() + "\n"
}

fn run_pipeline(dir: &Path, doc: &str, query: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    std::fs::write(dir.join("planted.jsonl"), doc).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("query.txt"), query).map_err(|e| e.to_string())?;
    crpse(
        dir,
        &[
            "synth",
            "--out",
            "syn",
            "--seed",
            "7",
            "--entities",
            "40",
            "--distractor-rate",
            "0.2",
        ],
    )?;
    crpse(
        dir,
        &[
            "build",
            "--seed",
            "7",
            "--corpus",
            "syn/corpus.jsonl",
            "--out",
            "ds.txt",
        ],
    )?;
    crpse(
        dir,
        &[
            "recommend",
            "--seed",
            "7",
            "--json",
            "--doc",
            "query.txt",
            "--dataset",
            "ds.txt",
            "--out",
            "rec.jsonl",
        ],
    )?;
    crpse(
        dir,
        &[
            "check",
            "--seed",
            "7",
            "--json",
            "--doc",
            "planted.jsonl",
            "--dataset",
            "ds.txt",
            "--metadata",
            "syn/metadata.jsonl",
            "--out",
            "check.jsonl",
        ],
    )?;
    let mut files = BTreeMap::new();
    for name in [
        "ds.txt",
        "ds.txt.config.json",
        "rec.jsonl",
        "rec.jsonl.config.json",
        "check.jsonl",
        "check.jsonl.config.json",
    ] {
        files.insert(
            name.to_string(),
            std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?,
        );
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let spec = SynthSpec {
        n_entities: 40,
        distractor_rate: 0.2,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec, 7).map_err(|e| e.to_string())?;
    let doc = planted_doc(&corpus.entities, &corpus.sources);
    let query: String = corpus.gold.iter().map(|g| g.sentence.clone() + " ").collect();

    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_pipeline(a.path(), &doc, &query)?;
    let second = run_pipeline(b.path(), &doc, &query)?;
    for (name, bytes) in &first {
        ensure!(second[name] == *bytes, "{name} differs between runs");
    }
    let report: serde_json::Value = serde_json::from_slice(&first["check.jsonl"]).map_err(|e| e.to_string())?;
    ensure!(report["flagged"] == 1, "planted fixture flagged {}", report["flagged"]);
    ensure!(
        report["findings"][0]["paper_id"] == corpus.sources[0].as_str(),
        "flagged {}",
        report["findings"][0]["paper_id"]
    );
    let recs = first["rec.jsonl"].iter().filter(|b| **b == b'\n').count();
    Ok(format!(
        "{} files identical; {recs} recommendations; planted check has 1 finding",
        first.len()
    ))
}

fn main() {
    let criteria: [Check; 10] = [
        ("count score normalization", count_normalization),
        ("mixed score lambda endpoints", lambda_endpoints),
        ("missing-citation truth table", dmc_truth_table),
        ("threshold boundary", threshold_boundary),
        ("end-to-end synthetic recall", end_to_end),
        ("outlier classifier", classifier),
        ("BERT worked example", bert_example),
        ("metrics oracle", metrics_oracle),
        ("age statistics", age_statistics),
        ("byte determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
