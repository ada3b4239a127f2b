//! `deepangio`: synthesize phantoms, train, generate angiograms, segment and evaluate.

mod commands;
mod failure;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::{Failure, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "deepangio", version, about = "Deep angiogram vessel extraction from fundus images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded set of vessel phantoms and their manifest.
    SynthData(SynthArgs),
    /// Train the angiogram model or a baseline segmentation network.
    Train(TrainArgs),
    /// Write the angiogram of every input image as an 8-bit grayscale PNG.
    Angiogram(PredictArgs),
    /// Write a binary vessel mask for every input image.
    Segment(PredictArgs),
    /// Score checkpoints on a manifest and write per-image metrics plus a summary.
    Eval(EvalArgs),
    /// Apply CLAHE at a fixed clip limit, for inspecting the augmentation.
    AugmentPreview(PreviewArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of trailing phantoms tagged as target domain (default: a quarter).
    #[arg(long)]
    holdout: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `key = value` config file.
    #[arg(long, env = "DEEPANGIO_CONFIG")]
    config: Option<PathBuf>,
    /// Train a baseline on green-channel or PCA input instead of the angiogram model.
    #[arg(long, value_parser = ["green", "pca"])]
    baseline: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config file's manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override any config key, e.g. `--set epochs=2` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// An image, or a directory whose PNG files are all processed.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated methods: angiogram, green-unet, pca-unet.
    #[arg(long, value_delimiter = ',', default_value = "angiogram,green-unet,pca-unet")]
    methods: Vec<String>,
    /// Checkpoint per method, `METHOD=PATH` (repeatable).
    #[arg(long = "ckpt", value_name = "METHOD=PATH")]
    ckpts: Vec<String>,
    #[arg(long)]
    csv: PathBuf,
    /// Summary CSV path (default: next to --csv with a `.summary.csv` suffix).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Which manifest records to score.
    #[arg(long, default_value = "target", value_parser = ["target", "source", "all"])]
    split: String,
}

#[derive(Args, Debug)]
struct PreviewArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    clip: f64,
    #[arg(long)]
    out: PathBuf,
    /// CLAHE tile grid, `ROWSxCOLS`.
    #[arg(long, default_value = "8x8")]
    tiles: String,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::SynthData(a) => commands::synth_data(&a.out, a.count, a.size, a.seed, a.holdout),
        Command::Train(a) => commands::train(commands::TrainRequest {
            config: a.config,
            baseline: a.baseline,
            out: a.out,
            manifest: a.manifest,
            resume: a.resume,
            overrides: a.overrides,
        }),
        Command::Angiogram(a) => commands::angiogram(&a.ckpt, &a.input, &a.out),
        Command::Segment(a) => commands::segment(&a.ckpt, &a.input, &a.out),
        Command::Eval(a) => commands::eval(&a.manifest, &a.methods, &a.ckpts, &a.csv, a.summary.as_deref(), &a.split),
        Command::AugmentPreview(a) => commands::augment_preview(&a.input, a.clip, &a.out, &a.tiles),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
