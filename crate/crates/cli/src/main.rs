//! `depref`: train, run and analyse graph-refinement dependency parsers.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "depref", version, about = "Dependency parsing by recursive graph-to-graph refinement")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write checkpoint, vocabulary and per-epoch metrics.
    Train(TrainArgs),
    /// Parse a CoNLL-U file from scratch.
    Parse(ParseArgs),
    /// Refine parses iteratively and write every intermediate result.
    Refine(RefineArgs),
    /// Attachment scores of a prediction against gold.
    Eval(EvalArgs),
    /// Error breakdowns over refinement iterations.
    Analyze(AnalyzeArgs),
    /// Finite-difference gradient checks for every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic toy treebank.
    GenToy(GenToyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Empty,
    File,
    Syntr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Rngtr,
    Syntr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PunctArg {
    Keep,
    Exclude,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Desk,
    Paper,
}

/// Options every command accepts.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat key=value settings file; flags on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for every file the command writes.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

/// How refinement starts and runs.
#[derive(Args, Debug, Clone)]
pub struct RefineOpts {
    /// Starting graph: empty, a parse file, or an initializer checkpoint.
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Maximum number of refinement iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Run every iteration even when a graph stops changing.
    #[arg(long)]
    pub no_stopping: bool,
    #[arg(long, value_enum)]
    pub single_root: Option<OnOff>,
    /// Initializer checkpoint used by `--init syntr`.
    #[arg(long)]
    pub initializer: Option<PathBuf>,
    /// Threads for sentence-parallel inference.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub refine: RefineOpts,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Starting parses of the training set for `--init file`.
    #[arg(long)]
    pub initial_parse: Option<PathBuf>,
    /// Starting parses of the dev set for `--init file`.
    #[arg(long)]
    pub dev_initial_parse: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Words rarer than this in the training set map to `<unk>`.
    #[arg(long)]
    pub min_freq: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Sentences to parse (CoNLL-U; existing heads are ignored).
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, value_enum)]
    pub single_root: Option<OnOff>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub refine: RefineOpts,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Starting parses for `--init file`.
    #[arg(long)]
    pub initial_parse: Option<PathBuf>,
    /// Gold trees; adds per-iteration scores to the trace.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub punct: Option<PunctArg>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub punct: Option<PunctArg>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Predictions in iteration order, comma separated or repeated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub pred: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub punct: Option<PunctArg>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Only run checks with these names (comma separated).
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub only: Option<Vec<String>>,
}

#[derive(Args, Debug)]
pub struct GenToyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write a copy with this fraction of heads rewired.
    #[arg(long)]
    pub corrupt: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RNG_REFINE_LOG", "info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = match settings::parse_cli(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(failure) => return failure.report(),
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => failure.report(),
    }
}
