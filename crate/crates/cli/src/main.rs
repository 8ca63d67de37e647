mod corpus;
mod models;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use util::Invalid;

const LONG_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\nrecord schema: mdfg-2\nmodel format: MDFGFT01");

#[derive(Parser)]
#[command(name = "mdfg", version, long_version = LONG_VERSION, about = "Corpus curation with quality, domain and toxicity annotations")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample sources for review, or vet them against judgments.
    Prepare(corpus::PrepareArgs),
    /// Apply the length, character, sensitive-word and dedup filters.
    Preprocess(corpus::PreprocessArgs),
    /// Train or apply a generic text classifier.
    #[command(subcommand)]
    Classifier(models::ClassifierCmd),
    /// Build and apply the quality scorer.
    #[command(subcommand)]
    Quality(models::QualityCmd),
    /// Build, refine and apply the domain classifier.
    #[command(subcommand)]
    Domain(models::DomainCmd),
    /// Build, refine and apply the toxicity classifier.
    #[command(subcommand)]
    Toxicity(models::ToxicityCmd),
    /// Attach quality, domain and toxicity annotations to preprocessed records.
    Annotate(corpus::AnnotateArgs),
    /// Distribution reports over annotated records.
    Stats(corpus::StatsArgs),
    /// Run prepare, preprocess, annotate and stats from a config file.
    Run(corpus::RunArgs),
}

/// Hyperparameters shared by the training subcommands. Unset flags fall
/// back to the `[train]` section of `--config`, then to built-in defaults.
#[derive(Args, Clone, Default)]
pub struct TrainArgs {
    /// Pipeline config whose [train] section supplies defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Hash buckets for character n-grams.
    #[arg(long)]
    pub buckets: Option<u32>,
    #[arg(long)]
    pub dim: Option<usize>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Prepare(a) => corpus::prepare(a),
        Command::Preprocess(a) => corpus::preprocess(a),
        Command::Classifier(c) => models::classifier(c),
        Command::Quality(c) => models::quality(c),
        Command::Domain(c) => models::domain(c),
        Command::Toxicity(c) => models::toxicity(c),
        Command::Annotate(a) => corpus::annotate(a),
        Command::Stats(a) => corpus::stats(a),
        Command::Run(a) => return corpus::run(a, cli.jobs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
