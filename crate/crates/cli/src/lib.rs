//! Command-line driver: reads interchange files, runs one pipeline stage and
//! writes interchange files, printing a one-line `key=value` summary.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use patimt_core::eval::{MatchMethod, Smoothing};
use patimt_core::instruct::{BoxDialect, InstanceFormat};
use patimt_core::predparse::ParseStrictness;
use patimt_core::LangPair;

mod commands;
pub mod config;
pub mod translator;

pub use config::ToolConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROCESSING: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "patimt", version, about = "Corpus building and evaluation for position-aware text-image translation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file. Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-image work. 1 runs sequentially.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// plain-unit, boxed-1000, det-999 or absolute.
    #[arg(long, global = true)]
    pub dialect: Option<BoxDialect>,
    /// plain-text or structured.
    #[arg(long, global = true)]
    pub format: Option<InstanceFormat>,
    /// strict or salvage.
    #[arg(long, global = true)]
    pub strictness: Option<ParseStrictness>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assign scenario labels from precomputed embeddings.
    Classify(ClassifyArgs),
    /// Drop images with repeated characters or too little text.
    #[command(allow_negative_numbers = true)]
    Filter(FilterArgs),
    /// Merge OCR lines into paragraph blocks.
    #[command(allow_negative_numbers = true)]
    Merge(MergeArgs),
    /// Route images by scenario and recover lines the layout engine missed.
    #[command(allow_negative_numbers = true)]
    Refine(RefineArgs),
    /// Translate blocks and emit instruction instances.
    BuildInstructions(BuildArgs),
    /// Normalize model outputs for inspection.
    ParsePredictions(ParsePredArgs),
    /// Score predictions against gold instances.
    Evaluate(EvaluateArgs),
    /// Corpus statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Embedding interchange file.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Records whose scenario should be filled in. Without it the output
    /// holds one classification per image.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, required_unless_present = "check")]
    pub out: Option<PathBuf>,
    /// Validate the embedding file only; vectors must be unit-norm.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Lines interchange file.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, required_unless_present = "check")]
    pub out: Option<PathBuf>,
    /// Rejected image ids with reasons.
    #[arg(long)]
    pub rejected: Option<PathBuf>,
    #[arg(long)]
    pub repetition_len: Option<usize>,
    #[arg(long)]
    pub coverage_threshold: Option<f64>,
    /// Validate the lines file only.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub x_ths: Option<f64>,
    #[arg(long)]
    pub y_ths: Option<f64>,
    #[arg(long)]
    pub row_tolerance: Option<f64>,
    /// Join merged lines without spaces.
    #[arg(long)]
    pub cjk: bool,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Lines interchange file with scenarios.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Layout engine blocks, matched to records by image id.
    #[arg(long)]
    pub blocks: Option<PathBuf>,
    #[arg(long, required_unless_present = "check")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Validate both input files only.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Blocks interchange file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Instance file.
    #[arg(long)]
    pub out: PathBuf,
    /// dict:PATH or an http(s) endpoint.
    #[arg(long)]
    pub translator: Option<String>,
    /// Question pool JSON. The built-in pool is used otherwise.
    #[arg(long)]
    pub questions: Option<PathBuf>,
    /// Language pair for records that do not carry one.
    #[arg(long)]
    pub lang_pair: Option<LangPair>,
    /// Also write the translated records.
    #[arg(long)]
    pub translated_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParsePredArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Instance file giving each image's size, dialect and format.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Per-image diagnostics, one record per line.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// optimal or greedy.
    #[arg(long = "match")]
    pub method: Option<MatchMethod>,
    /// none or exp.
    #[arg(long)]
    pub smoothing: Option<Smoothing>,
    /// Do not pair full-image translations by position when no box matches.
    #[arg(long)]
    pub no_fallback: bool,
    /// Count unmatched predicted regions against BLEU and IoU.
    #[arg(long)]
    pub penalize_extra: bool,
    /// Shell command that reads scored pairs as JSON lines on stdin and
    /// prints one JSON document, stored under "external" in the report.
    #[arg(long)]
    pub external_scorer: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Error for bad flag or config values, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Runs one invocation. `args` exclude the program name.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let argv = std::iter::once(OsString::from("patimt")).chain(args.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match commands::dispatch(cli) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_PROCESSING
        }
    }
}
