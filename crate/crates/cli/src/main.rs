//! `attrgen`: synthesis, training, generation, completion, evaluation and
//! diagnostics from one binary.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use attrgen::training::TrainConfig;

#[derive(Debug, Parser)]
#[command(name = "attrgen", version, about = "Attribute-conditioned face generation on a from-scratch CNN engine")]
pub struct Cli {
    /// Worker threads (default: machine parallelism). Results do not depend
    /// on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for every random choice made by the command
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VocabArg {
    #[value(name = "poses-7")]
    Poses7,
    #[value(name = "accessories-7")]
    Accessories7,
}

impl From<VocabArg> for attrgen::dataset::Vocabulary {
    fn from(v: VocabArg) -> Self {
        match v {
            VocabArg::Poses7 => attrgen::dataset::Vocabulary::Poses7,
            VocabArg::Accessories7 => attrgen::dataset::Vocabulary::Accessories7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureArg {
    Pixels,
    #[value(name = "stage2-mid")]
    Stage2Mid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Mse,
    Mae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    /// Attribute change between images of one identity
    Change,
    /// Eye-bar completion: occluded image in, clean image out
    Completion,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a procedural face dataset and its manifest
    Synth(SynthArgs),
    /// Train stage 1 or stage 2
    Train(TrainArgs),
    /// Generate attribute-altered images into a montage
    Generate(GenerateArgs),
    /// Occlude the eyes and restore them with a completion checkpoint
    Complete(CompleteArgs),
    /// Mean per-pixel generation error on held-out pairs
    EvalGen(EvalGenArgs),
    /// Generation-based retrieval, the two-step baseline, and pose bins
    EvalRetrieval(EvalRetrievalArgs),
    /// Write the attribute branch's feature maps as images
    DumpMaps(DumpMapsArgs),
    /// Finite-difference check of every backward pass
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Training identities
    #[arg(long, default_value_t = 40)]
    pub ids: u32,
    /// Held-out identities, numbered after the training ones
    #[arg(long, default_value_t = 0)]
    pub test_ids: u32,
    #[arg(long, default_value_t = 4)]
    pub illums: u32,
    #[arg(long, value_enum, default_value_t = VocabArg::Poses7)]
    pub vocab: VocabArg,
    /// Image side length
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// `key = value` file; explicit flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to write
    #[arg(long)]
    pub out: PathBuf,
    /// Stage-1 checkpoint (required for stage 2)
    #[arg(long)]
    pub ckpt1: Option<PathBuf>,
    /// Continue from this checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VocabArg::Poses7)]
    pub vocab: VocabArg,
    #[arg(long, value_enum, default_value_t = TaskArg::Change)]
    pub task: TaskArg,
    /// Loss curve CSV (default: next to the checkpoint)
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().momentum)]
    pub momentum: f64,
    #[arg(long, default_value_t = TrainConfig::default().max_iterations)]
    pub max_iterations: u64,
    /// Loss (completion defaults to mae)
    #[arg(long, value_enum, default_value_t = LossArg::Mse)]
    pub loss: LossArg,
    #[arg(long, default_value_t = TrainConfig::default().eval_interval)]
    pub eval_interval: u64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt1: PathBuf,
    #[arg(long)]
    pub ckpt2: Option<PathBuf>,
    /// Source PGM images, one montage row each
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Target attribute indices (default: every attribute)
    #[arg(long, num_args = 1..)]
    pub attr: Vec<usize>,
    /// Montage PGM to write
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    /// Completion checkpoint (a stage-1 network trained with --task completion)
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Attribute of each input (one value, or one per input)
    #[arg(long, num_args = 1.., default_value = "3")]
    pub attr: Vec<usize>,
    /// First occluded row (default scales 10 of 32 to the image height)
    #[arg(long)]
    pub bar_top: Option<usize>,
    #[arg(long)]
    pub bar_height: Option<usize>,
    /// Montage PGM: input | occluded | completed
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalGenArgs {
    #[arg(long)]
    pub ckpt1: PathBuf,
    #[arg(long)]
    pub ckpt2: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = VocabArg::Poses7)]
    pub vocab: VocabArg,
    /// Metrics CSV to write
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalRetrievalArgs {
    #[arg(long)]
    pub ckpt1: PathBuf,
    /// Required for --feature stage2-mid
    #[arg(long)]
    pub ckpt2: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = VocabArg::Poses7)]
    pub vocab: VocabArg,
    #[arg(long, value_enum, default_value_t = FeatureArg::Pixels)]
    pub feature: FeatureArg,
    /// Report one criterion (default: both)
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub criterion: Option<u8>,
    /// Largest K reported
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 500)]
    pub queries: usize,
    /// Skip gallery distribution alignment
    #[arg(long)]
    pub no_align: bool,
    /// Iterations for the baseline's attribute classifier
    #[arg(long, default_value_t = 300)]
    pub classifier_iterations: u64,
    /// Directory for metrics.csv, pose_bins.csv and montage.pgm
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpMapsArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    /// Input side length of the whole-network checks
    #[arg(long, default_value_t = 8)]
    pub size: usize,
}

/// Failure classes mapped to exit codes.
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<attrgen::Error> for Failure {
    fn from(e: attrgen::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Names of train flags given explicitly on the command line.
fn explicit_train_flags(matches: &ArgMatches) -> Vec<&'static str> {
    let Some(("train", sub)) = matches.subcommand() else {
        return Vec::new();
    };
    let mut flags: Vec<&'static str> = ["batch_size", "lr", "momentum", "max_iterations", "loss", "eval_interval"]
        .into_iter()
        .filter(|id| sub.value_source(id) == Some(ValueSource::CommandLine))
        .collect();
    if [matches, sub].iter().any(|m| m.value_source("seed") == Some(ValueSource::CommandLine)) {
        flags.push("seed");
    }
    flags
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let explicit = explicit_train_flags(&matches);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::dispatch(&cli, &explicit) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
