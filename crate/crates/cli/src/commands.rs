use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crpse_core::corpus::{load_corpus_all, parse_record_line, QueryDocument};
use crpse_core::dmc::{
    age_stats, check_document, merge_findings, CheckContext, FixtureResolver, MissingCitationReport, NoResolver,
    ReferenceResolver,
};
use crpse_core::eval::{evaluate, load_gold, MetricsReport};
use crpse_core::extract::{BaselineExtractor, EntityExtractor};
use crpse_core::index::{accumulate_corpus, apply_threshold, load_dataset, DEFAULT_THRESHOLD};
use crpse_core::outlier::{
    build_negative_samples, build_positive_samples, filter_dataset, label_samples, load_model, read_frequency_list,
    save_model, train, TrainConfig,
};
use crpse_core::par::{self, Execution};
use crpse_core::provider::RemoteProvider;
use crpse_core::ranking::{
    ContextScorer, Criterion, EmbeddingProvider, HashedEmbedder, MetadataStore, RankingConfig, ScoredCandidate,
    DEFAULT_K, DEFAULT_LAMBDA,
};
use crpse_core::recommend::recommend;
use crpse_core::synth::{generate_synthetic_corpus, SynthSpec};
use crpse_core::Error;
use serde::Serialize;

use crate::config::{FileConfig, RunConfig};
pub use crate::output::CliError;
use crate::output::{emit, json_line, write_atomic};
use crate::{Cli, Command, RankArgs};

struct Ctx<'a> {
    cli: &'a Cli,
    file: &'a FileConfig,
    seed: u64,
    workers: Option<usize>,
    provider_url: Option<String>,
    provider: Option<RemoteProvider>,
    exec: Execution,
    echoed: Mutex<Option<(Option<PathBuf>, String)>>,
}

impl Ctx<'_> {
    fn extractor(&self) -> &dyn EntityExtractor {
        match &self.provider {
            Some(p) => p,
            None => &BaselineExtractor,
        }
    }

    fn rank_config(&self, r: &RankArgs) -> Result<RankingConfig, CliError> {
        let criterion: Criterion = r
            .criterion
            .as_deref()
            .or(self.file.criterion.as_deref())
            .unwrap_or("count")
            .parse()?;
        let lambda = r.lambda.or(self.file.lambda).unwrap_or(DEFAULT_LAMBDA);
        let k = r.k.or(self.file.k).unwrap_or(DEFAULT_K);
        Ok(RankingConfig::new(criterion, lambda, k)?)
    }

    /// Prints the resolved config to stderr; [`Ctx::finish`] stores it
    /// next to the output once the run has succeeded.
    fn echo(&self, mut rc: RunConfig) {
        rc.seed = self.seed;
        rc.provider = self.provider_url.clone();
        rc.workers = self.workers;
        let line = serde_json::to_string(&rc).expect("config serializes");
        eprintln!("config: {line}");
        *self.echoed.lock().expect("config lock") = Some((rc.output, line));
    }

    fn finish(&self) -> Result<(), CliError> {
        if let Some((Some(out), line)) = self.echoed.lock().expect("config lock").take() {
            let mut name = out.into_os_string();
            name.push(".config.json");
            write_atomic(Path::new(&name), (line + "\n").as_bytes())?;
        }
        Ok(())
    }
}

fn run_config(subcommand: &'static str, inputs: &[&Path], output: Option<&Path>) -> RunConfig {
    RunConfig {
        subcommand,
        inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
        output: output.map(Path::to_path_buf),
        threshold: None,
        lambda: None,
        k: None,
        criterion: None,
        seed: 0,
        provider: None,
        workers: None,
    }
}

fn with_rank(mut rc: RunConfig, cfg: &RankingConfig) -> RunConfig {
    rc.lambda = Some(cfg.lambda);
    rc.k = Some(cfg.k);
    rc.criterion = Some(cfg.criterion.to_string());
    rc
}

pub fn run(cli: &Cli, file: &FileConfig) -> Result<(), CliError> {
    let workers = cli.global.workers.or(file.workers);
    if workers == Some(0) {
        return Err(Error::InvalidArgument("--workers must be at least 1".into()).into());
    }
    let provider_url = cli.global.provider.clone().or_else(|| file.provider.clone());
    let provider = match &provider_url {
        Some(url) => Some(RemoteProvider::connect(url)?),
        None => None,
    };
    let ctx = Ctx {
        cli,
        file,
        seed: cli.global.seed.or(file.seed).unwrap_or(0),
        workers,
        provider_url,
        provider,
        exec: if workers == Some(1) {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        echoed: Mutex::new(None),
    };
    in_pool(workers, || dispatch(&ctx))?;
    ctx.finish()
}

#[cfg(feature = "parallel")]
fn in_pool<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn in_pool<R>(_workers: Option<usize>, f: impl FnOnce() -> R) -> R {
    f()
}

fn dispatch(ctx: &Ctx<'_>) -> Result<(), CliError> {
    match &ctx.cli.command {
        Command::Build { corpus, out, threshold } => cmd_build(ctx, corpus, out, *threshold),
        Command::TrainFilter {
            dataset,
            out,
            surnames,
            words,
            titles,
            model,
            model_out,
            n_surnames,
            n_words,
            feature_len,
        } => cmd_train_filter(
            ctx,
            TrainFilterArgs {
                dataset,
                out,
                surnames: surnames.as_deref(),
                words: words.as_deref(),
                titles: titles.as_deref(),
                model: model.as_deref(),
                model_out: model_out.as_deref(),
                n_surnames: *n_surnames,
                n_words: *n_words,
                feature_len: *feature_len,
            },
        ),
        Command::Recommend {
            doc,
            dataset,
            rank,
            out,
        } => cmd_recommend(ctx, doc, dataset, rank, out.as_deref()),
        Command::Check {
            doc,
            dataset,
            rank,
            resolver,
            out,
        } => cmd_check(ctx, doc, dataset, rank, resolver.as_deref(), out.as_deref()),
        Command::Eval {
            gold,
            dataset,
            rank,
            out,
        } => cmd_eval(ctx, gold, dataset, rank, out.as_deref()),
        Command::Stats {
            report,
            metadata,
            baseline_year,
        } => cmd_stats(ctx, report, metadata.as_deref(), *baseline_year),
        Command::Synth {
            out,
            entities,
            docs_per_entity,
            distractor_rate,
            outliers,
        } => {
            let spec = SynthSpec {
                n_entities: *entities,
                docs_per_entity: *docs_per_entity,
                distractor_rate: *distractor_rate,
                n_outliers: *outliers,
                ..SynthSpec::default()
            };
            cmd_synth(ctx, out, &spec)
        }
    }
}

fn cmd_build(ctx: &Ctx<'_>, corpus: &Path, out: &Path, threshold: Option<u64>) -> Result<(), CliError> {
    let threshold = threshold.or(ctx.file.threshold).unwrap_or(DEFAULT_THRESHOLD);
    let mut rc = run_config("build", &[corpus], Some(out));
    rc.threshold = Some(threshold);
    ctx.echo(rc);

    let (records, summary) = load_corpus_all(corpus, ctx.exec)?;
    let acc = accumulate_corpus(&records, ctx.extractor(), ctx.exec);
    let ds = apply_threshold(&acc, threshold)?;
    write_atomic(out, ds.to_text().as_bytes())?;

    #[derive(Serialize)]
    struct BuildSummary {
        loaded: usize,
        skipped: usize,
        raw_entities: usize,
        entities: usize,
        threshold: u64,
    }
    let s = BuildSummary {
        loaded: summary.loaded,
        skipped: summary.skipped,
        raw_entities: acc.entity_count(),
        entities: ds.len(),
        threshold,
    };
    let text = if ctx.cli.global.json {
        json_line(&s)
    } else {
        format!(
            "records loaded {}  skipped {}\nentities seen {}  kept {} (threshold {})\n",
            s.loaded, s.skipped, s.raw_entities, s.entities, s.threshold
        )
    };
    emit(None, &text)
}

struct TrainFilterArgs<'a> {
    dataset: &'a Path,
    out: &'a Path,
    surnames: Option<&'a Path>,
    words: Option<&'a Path>,
    titles: Option<&'a Path>,
    model: Option<&'a Path>,
    model_out: Option<&'a Path>,
    n_surnames: usize,
    n_words: usize,
    feature_len: usize,
}

fn read_tokens(path: Option<&Path>) -> Result<Vec<String>, CliError> {
    Ok(match path {
        Some(p) => read_frequency_list(p)?.into_iter().map(|(t, _)| t).collect(),
        None => Vec::new(),
    })
}

fn cmd_train_filter(ctx: &Ctx<'_>, a: TrainFilterArgs<'_>) -> Result<(), CliError> {
    let inputs: Vec<&Path> = [Some(a.dataset), a.surnames, a.words, a.titles, a.model]
        .into_iter()
        .flatten()
        .collect();
    ctx.echo(run_config("train-filter", &inputs, Some(a.out)));
    let ds = load_dataset(a.dataset)?;

    #[derive(Serialize, Default)]
    struct FilterSummary {
        entities_in: usize,
        entities_out: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        samples: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        split: Option<[usize; 3]>,
        #[serde(skip_serializing_if = "Option::is_none")]
        validation_f1: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        test_f1: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        n_trees: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        max_depth: Option<usize>,
    }
    let mut s = FilterSummary {
        entities_in: ds.len(),
        ..Default::default()
    };

    let model = match a.model {
        Some(p) => load_model(p)?,
        None => {
            let surnames = read_tokens(a.surnames)?;
            let words = read_tokens(a.words)?;
            let titles: Vec<String> = match a.titles {
                Some(p) => MetadataStore::load(p)?.iter().map(|m| m.title.clone()).collect(),
                None => Vec::new(),
            };
            let positives = build_positive_samples(&surnames, &words, a.n_surnames, a.n_words);
            let surname_set: HashSet<String> = surnames.into_iter().collect();
            let word_set: HashSet<String> = words.into_iter().collect();
            let negatives = build_negative_samples(&titles, &surname_set, &word_set);
            let samples = label_samples(&ds, &positives, &negatives, a.feature_len);
            let report = train(
                &samples,
                &TrainConfig {
                    seed: ctx.seed,
                    exec: ctx.exec,
                    ..Default::default()
                },
            )?;
            s.samples = Some(samples.len());
            let sp = report.model.split;
            s.split = Some([sp.train, sp.validation, sp.test]);
            s.validation_f1 = Some(report.validation_f1);
            s.test_f1 = Some(report.test_f1);
            s.n_trees = Some(report.n_trees);
            s.max_depth = report.max_depth;
            if let Some(p) = a.model_out {
                save_model(&report.model, p)?;
            }
            report.model
        }
    };
    let filtered = filter_dataset(&ds, &model, ctx.exec);
    s.entities_out = filtered.len();
    write_atomic(a.out, filtered.to_text().as_bytes())?;

    let text = if ctx.cli.global.json {
        json_line(&s)
    } else {
        let mut t = format!("entities {} -> {}\n", s.entities_in, s.entities_out);
        if let (Some(n), Some([tr, va, te]), Some(vf), Some(tf)) = (s.samples, s.split, s.validation_f1, s.test_f1) {
            let _ = writeln!(t, "samples {n} (train {tr}, validation {va}, test {te})");
            let _ = writeln!(t, "validation F1 {vf:.3}  test F1 {tf:.3}");
        }
        t
    };
    emit(None, &text)
}

/// Corpus-style JSONL gives one document per line; anything else is read
/// as one plain-text document named after the file.
fn load_documents(path: &Path) -> Result<Vec<QueryDocument>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    if first.is_some_and(|l| l.trim_start().starts_with('{')) {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                parse_record_line(l)
                    .map(|r| QueryDocument::from_record(&r))
                    .map_err(|e| CliError::from(e).context(&format!("{}:{}", path.display(), i + 1)))
            })
            .collect()
    } else if first.is_none() {
        Ok(Vec::new())
    } else {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(vec![QueryDocument::from_text(id, &text, Vec::new())])
    }
}

fn load_metadata(path: Option<&Path>) -> Result<MetadataStore, CliError> {
    Ok(match path {
        Some(p) => MetadataStore::load(p)?,
        None => MetadataStore::new(),
    })
}

struct Ranking<'a> {
    cfg: RankingConfig,
    metadata: MetadataStore,
    embedder: Box<dyn EmbeddingProvider + 'a>,
}

impl<'a> Ranking<'a> {
    fn new(ctx: &'a Ctx<'_>, rank: &RankArgs) -> Result<Self, CliError> {
        let cfg = ctx.rank_config(rank)?;
        if cfg.criterion == Criterion::Mixed && rank.metadata.is_none() {
            return Err(Error::InvalidArgument("the mixed criterion needs --metadata".into()).into());
        }
        let embedder: Box<dyn EmbeddingProvider> = match &ctx.provider {
            Some(p) => Box::new(ProviderRef(p)),
            None => Box::new(HashedEmbedder::default()),
        };
        Ok(Ranking {
            cfg,
            metadata: load_metadata(rank.metadata.as_deref())?,
            embedder,
        })
    }

    fn scorer(&self) -> Option<ContextScorer<'_>> {
        (self.cfg.criterion == Criterion::Mixed).then(|| ContextScorer::new(self.embedder.as_ref(), &self.metadata))
    }
}

struct ProviderRef<'a>(&'a RemoteProvider);

impl EmbeddingProvider for ProviderRef<'_> {
    fn id(&self) -> &str {
        self.0.id()
    }

    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn embed(&self, text: &str) -> crpse_core::Result<Vec<f64>> {
        self.0.embed(text)
    }
}

#[derive(Serialize)]
struct RecommendLine<'a> {
    doc_id: &'a str,
    entity: &'a str,
    sentence_index: usize,
    candidates: &'a [ScoredCandidate],
    criterion: Criterion,
    lambda: f64,
}

fn cmd_recommend(
    ctx: &Ctx<'_>,
    doc: &Path,
    dataset: &Path,
    rank: &RankArgs,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let ranking = Ranking::new(ctx, rank)?;
    let mut inputs = vec![doc, dataset];
    inputs.extend(rank.metadata.as_deref());
    ctx.echo(with_rank(run_config("recommend", &inputs, out), &ranking.cfg));

    let ds = load_dataset(dataset)?;
    let docs = load_documents(doc)?;
    let scorer = ranking.scorer();
    let results = par::map(ctx.exec, &docs, |d| {
        recommend(
            d,
            &ds,
            &ranking.cfg,
            ctx.extractor(),
            scorer.as_ref(),
            Execution::Sequential,
        )
    });

    let mut text = String::new();
    if !ctx.cli.global.json && results.iter().any(|r| r.as_ref().is_ok_and(|v| !v.is_empty())) {
        text.push_str("doc\tsentence\tentity\trank\tpaper\tcount\tscore\n");
    }
    for (d, recs) in docs.iter().zip(results) {
        for rec in recs? {
            if ctx.cli.global.json {
                text.push_str(&json_line(&RecommendLine {
                    doc_id: &d.doc_id,
                    entity: &rec.entity,
                    sentence_index: rec.sentence_index,
                    candidates: &rec.candidates,
                    criterion: ranking.cfg.criterion,
                    lambda: ranking.cfg.lambda,
                }));
            } else {
                for (i, c) in rec.candidates.iter().enumerate() {
                    let _ = writeln!(
                        text,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}",
                        d.doc_id,
                        rec.sentence_index,
                        rec.entity,
                        i + 1,
                        c.paper_id,
                        c.count,
                        c.r
                    );
                }
            }
        }
    }
    emit(out, &text)
}

fn cmd_check(
    ctx: &Ctx<'_>,
    doc: &Path,
    dataset: &Path,
    rank: &RankArgs,
    resolver: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let ranking = Ranking::new(ctx, rank)?;
    let mut inputs = vec![doc, dataset];
    inputs.extend(rank.metadata.as_deref());
    inputs.extend(resolver);
    ctx.echo(with_rank(run_config("check", &inputs, out), &ranking.cfg));

    let ds = load_dataset(dataset)?;
    let docs = load_documents(doc)?;
    let fixture;
    let resolver: &dyn ReferenceResolver = match resolver {
        Some(p) => {
            fixture = FixtureResolver::load(p)?;
            &fixture
        }
        None => &NoResolver,
    };
    let scorer = ranking.scorer();
    let cx = CheckContext {
        ds: &ds,
        cfg: ranking.cfg,
        extractor: ctx.extractor(),
        scorer: scorer.as_ref(),
        metadata: &ranking.metadata,
        resolver,
    };
    let reports = par::map(ctx.exec, &docs, |d| check_document(d, &cx, Execution::Sequential));
    let reports: Vec<MissingCitationReport> = reports.into_iter().collect::<Result<_, _>>()?;

    let mut text = String::new();
    if ctx.cli.global.json {
        for r in &reports {
            text.push_str(&json_line(r));
        }
    } else {
        for r in &reports {
            let _ = writeln!(
                text,
                "{}: {} entities checked, {} flagged{}",
                r.doc_id,
                r.checked,
                r.flagged,
                if r.resolver_available { "" } else { " (unconfirmed)" }
            );
            for f in &r.findings {
                let year = f.year.map_or_else(|| "-".to_string(), |y| y.to_string());
                let _ = writeln!(text, "  {}\t{}\t{}\t{}", f.entity, f.paper_id, year, f.title);
            }
        }
    }
    emit(out, &text)
}

#[derive(Serialize)]
struct EvalLine {
    #[serde(flatten)]
    metrics: MetricsReport,
    criterion: Criterion,
    lambda: f64,
}

fn cmd_eval(ctx: &Ctx<'_>, gold: &Path, dataset: &Path, rank: &RankArgs, out: Option<&Path>) -> Result<(), CliError> {
    let ranking = Ranking::new(ctx, rank)?;
    let mut inputs = vec![gold, dataset];
    inputs.extend(rank.metadata.as_deref());
    ctx.echo(with_rank(run_config("eval", &inputs, out), &ranking.cfg));

    let ds = load_dataset(dataset)?;
    let gold = load_gold(gold)?;
    if gold.is_empty() {
        return emit(out, "");
    }
    let scorer = ranking.scorer();
    let m = evaluate(&ds, &ranking.cfg, scorer.as_ref(), &gold, ctx.exec)?;
    let text = if ctx.cli.global.json {
        json_line(&EvalLine {
            metrics: m,
            criterion: ranking.cfg.criterion,
            lambda: ranking.cfg.lambda,
        })
    } else {
        format!(
            "n\trecall@1\trecall@5\trecall@10\tMRR\tMAP\n{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            m.n, m.recall_at_1, m.recall_at_5, m.recall_at_10, m.mrr, m.map
        )
    };
    emit(out, &text)
}

fn cmd_stats(ctx: &Ctx<'_>, report: &Path, metadata: Option<&Path>, baseline_year: i32) -> Result<(), CliError> {
    let mut inputs = vec![report];
    inputs.extend(metadata);
    ctx.echo(run_config("stats", &inputs, None));

    let meta = load_metadata(metadata)?;
    let text = std::fs::read_to_string(report).map_err(|e| CliError::io(report, e))?;
    let mut findings = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: MissingCitationReport = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        findings.extend(r.findings);
    }
    let merged = merge_findings(&findings);
    let years: Vec<i32> = merged
        .iter()
        .filter_map(|f| {
            let y = f.year.or_else(|| meta.get(&f.paper_id).and_then(|m| m.year));
            if y.is_none() {
                log::warn!("no year for {}; left out of age statistics", f.paper_id);
            }
            y
        })
        .collect();
    if years.is_empty() {
        return emit(None, "");
    }
    let s = age_stats(&years, baseline_year)?;
    let text = if ctx.cli.global.json {
        json_line(&s)
    } else {
        format!(
            "n\tmax\tmin\tmode\tmean\tmedian\n{}\t{}\t{}\t{}\t{:.1}\t{:.1}\n",
            s.n, s.max, s.min, s.mode, s.mean, s.median
        )
    };
    emit(None, &text)
}

fn cmd_synth(ctx: &Ctx<'_>, out: &PathBuf, spec: &SynthSpec) -> Result<(), CliError> {
    ctx.echo(run_config("synth", &[], Some(out)));
    let corpus = generate_synthetic_corpus(spec, ctx.seed)?;
    corpus.write_to(out)?;
    let text = if ctx.cli.global.json {
        json_line(&serde_json::json!({
            "records": corpus.records.len(),
            "entities": corpus.entities.len(),
            "outliers": corpus.outlier_terms.len(),
        }))
    } else {
        format!(
            "{} records, {} entities, {} outlier terms written to {}\n",
            corpus.records.len(),
            corpus.entities.len(),
            corpus.outlier_terms.len(),
            out.display()
        )
    };
    emit(None, &text)
}
