mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use phrasebreak_core::Error;

/// Exit statuses. Usage errors exit with clap's 2.
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_BACKEND: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "phrasebreak", version, about = "LLM phrase-break annotation experiments")]
pub struct Cli {
    /// Seed for every randomized step (default 42, or `seed` from --config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with [prompt], [backend], [generate] and [train] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Annotate a corpus through a backend and validate the outputs.
    Generate(GenerateArgs),
    /// Validate recorded raw outputs against a corpus.
    Validate(ValidateArgs),
    /// Label percentages per annotator.
    Stats(StatsArgs),
    /// Agreement, alpha and F1 between two annotation files.
    Compare(CompareArgs),
    /// Generate with several k values or cross-lingual presets and compare
    /// each against reference annotations.
    Sweep(SweepArgs),
    /// Seeded train/validation/test split of a corpus.
    Split(SplitArgs),
    /// Train the junction classifier on an annotation file.
    Train(TrainArgs),
    /// Score a trained classifier on annotated utterances.
    Eval(EvalArgs),
    /// Write a synthetic punctuated corpus with rule-derived labels.
    Synth(SynthArgs),
    /// Serve blinded text-annotation pairs for human judgment.
    ServeReview(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Mock,
    Http,
    Replay,
}

#[derive(Args, Debug, Clone)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: BackendChoice,
    /// Recorded raw outputs for --backend replay.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub base_url: Option<String>,
    /// Response cache directory (http defaults to .phrasebreak-cache).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub max_concurrent: Option<usize>,
    /// Append every outgoing HTTP request body to this file.
    #[arg(long)]
    pub log_requests: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Ask once more for every output that fails validation.
    #[arg(long)]
    pub retry_invalid: bool,
}

#[derive(Args, Debug, Clone)]
pub struct PromptArgs {
    /// Few-shot example pool (annotation file with text and language).
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Prompt template file.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Language of the monolingual persona and its examples.
    #[arg(long)]
    pub lang: Option<String>,
    /// Only annotate corpus utterances in this language.
    #[arg(long)]
    pub filter_language: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    /// Draw fresh examples for every target instead of once per run.
    #[arg(long)]
    pub resample_per_target: bool,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Number of monolingual examples.
    #[arg(long, conflicts_with = "mix")]
    pub k: Option<usize>,
    /// Cross-lingual mix such as `en:4,fr:12` (multilingual persona).
    #[arg(long)]
    pub mix: Option<String>,
    /// Source language listed first in a mix.
    #[arg(long)]
    pub source: Option<String>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Raw outputs file as written by `generate`.
    #[arg(long)]
    pub outputs: PathBuf,
    /// Exit with the validation status unless every output passes.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AlphaUnitArg {
    Junction,
    Utterance,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Reference annotation file.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "junction")]
    pub alpha_unit: AlphaUnitArg,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Reference annotation file (repeatable; files may hold several annotators).
    #[arg(long = "reference", required = true)]
    pub references: Vec<PathBuf>,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Comma-separated k values, e.g. `0,2,4,8`.
    #[arg(long, value_delimiter = ',', conflicts_with = "presets")]
    pub k: Vec<usize>,
    /// Cross-lingual presets `source:target`, e.g. `en:fr`.
    #[arg(long)]
    pub presets: Option<String>,
    /// JSON object mapping annotator tags to human scores.
    #[arg(long)]
    pub human_scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.85,0.075,0.075")]
    pub ratios: Vec<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Annotation file with exactly one annotator.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Split file from `split`; without it the corpus is split on the fly.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.85,0.075,0.075")]
    pub ratios: Vec<f64>,
    /// Select the epoch on the test set instead of the validation set.
    #[arg(long)]
    pub select_on_test: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long, value_enum, default_value = "f64")]
    pub precision: Precision,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Evaluate on this split's test ids; all annotated ids otherwise.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "f64")]
    pub precision: Precision,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Annotation files to pool (repeatable).
    #[arg(long = "annotations", required = true)]
    pub annotations: Vec<PathBuf>,
    /// Journal directory; defaults to <out>/review.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: std::net::IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Built review UI to serve at /.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Contract(_) | Error::Parse { .. } | Error::NotFound(_) | Error::Conflict(_) => {
            EXIT_VALIDATION
        }
        Error::Backend(_) => EXIT_BACKEND,
        _ => EXIT_OTHER,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
