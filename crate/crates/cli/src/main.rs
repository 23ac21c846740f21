//! `crpse`: build entity datasets, recommend source papers and flag
//! missing citations from the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;

#[derive(Debug, Parser)]
#[command(
    name = "crpse",
    version,
    about = "Citation recommendation for published scientific entities"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Emit JSON lines instead of tables
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads for document processing [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// TOML file with defaults for threshold, lambda, k, criterion, seed, provider, workers; flags win
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Random seed [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// NLP provider base URL; the built-in baseline is used when unset
    #[arg(long, global = true, env = "CRPSE_PROVIDER_URL", value_name = "URL")]
    pub provider: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RankArgs {
    /// Number of candidates per entity [default: 5]
    #[arg(long)]
    pub k: Option<usize>,
    /// Ranking criterion, `count` or `mixed` [default: count]
    #[arg(long)]
    pub criterion: Option<String>,
    /// Weight of the count score in the mixed criterion [default: 0.7]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Paper metadata JSONL (title, abstract, year); required for `mixed`
    #[arg(long, value_name = "PATH")]
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the entity to paper dataset from a corpus
    Build {
        /// Corpus JSONL, one paper per line
        #[arg(long)]
        corpus: PathBuf,
        /// Dataset output path
        #[arg(long)]
        out: PathBuf,
        /// Minimum top co-occurrence count for an entity to be kept [default: 20]
        #[arg(long)]
        threshold: Option<u64>,
    },
    /// Train the outlier classifier and remove outlier entities
    TrainFilter {
        /// Dataset to filter
        #[arg(long)]
        dataset: PathBuf,
        /// Filtered dataset output path
        #[arg(long)]
        out: PathBuf,
        /// Surname frequency list, `token<TAB>count` sorted by count
        #[arg(long, value_name = "PATH")]
        surnames: Option<PathBuf>,
        /// Word frequency list, `token<TAB>count` sorted by count
        #[arg(long, value_name = "PATH")]
        words: Option<PathBuf>,
        /// Paper metadata JSONL; titles of the form `Name: ...` give published samples
        #[arg(long, value_name = "PATH")]
        titles: Option<PathBuf>,
        /// Apply this saved model instead of training
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Where to save the trained model
        #[arg(long, value_name = "PATH")]
        model_out: Option<PathBuf>,
        /// Top surnames used as outlier samples
        #[arg(long, default_value_t = crpse_core::outlier::DEFAULT_SURNAMES)]
        n_surnames: usize,
        /// Top words used as outlier samples
        #[arg(long, default_value_t = crpse_core::outlier::DEFAULT_WORDS)]
        n_words: usize,
        /// Feature vector length
        #[arg(long, default_value_t = crpse_core::outlier::DEFAULT_FEATURE_LEN)]
        feature_len: usize,
    },
    /// Recommend source papers for entities in documents
    Recommend {
        /// Document: corpus-style JSONL (one document per line) or plain text
        #[arg(long)]
        doc: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        rank: RankArgs,
        /// Write results here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Flag entities whose source paper is not cited
    Check {
        /// Document: corpus-style JSONL (one document per line) or plain text
        #[arg(long)]
        doc: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        rank: RankArgs,
        /// Reference fixture JSONL `{paper_id, references}` used to confirm findings
        #[arg(long, value_name = "PATH")]
        resolver: Option<PathBuf>,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score rankings against gold source papers
    Eval {
        /// Gold JSONL `{entity, gold_id, sentence}`
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        rank: RankArgs,
        /// Write the metrics here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Age statistics of flagged source papers
    Stats {
        /// JSONL reports written by `check --json`
        #[arg(long)]
        report: PathBuf,
        /// Paper metadata JSONL used to fill in missing years
        #[arg(long, value_name = "PATH")]
        metadata: Option<PathBuf>,
        /// Year ages are measured from
        #[arg(long)]
        baseline_year: i32,
    },
    /// Write a seeded synthetic corpus with gold labels
    Synth {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Planted entities
        #[arg(long, default_value_t = 200)]
        entities: usize,
        /// Source-citing sentences per entity
        #[arg(long, default_value_t = 25)]
        docs_per_entity: usize,
        /// Share of an entity's citations that go to distractors
        #[arg(long, default_value_t = 0.0)]
        distractor_rate: f64,
        /// Surname-like outlier terms
        #[arg(long, default_value_t = 20)]
        outliers: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let run = || -> Result<(), commands::CliError> {
        let file = match &cli.global.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        commands::run(&cli, &file)
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code())
        }
    }
}
