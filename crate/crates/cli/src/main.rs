mod augment;
mod checks;
mod common;
mod evaluate;
mod postprocess;
mod targets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "nhk",
    version,
    about = "Nuclear instance segmentation and classification toolkit"
)]
struct Cli {
    /// Worker threads for image-level parallelism (all cores when unset).
    #[arg(long, global = true, env = "NHK_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute HoVer target maps for a directory of label PNGs.
    GenTargets {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn foreground, HoVer and class maps into classified instances.
    Postprocess(postprocess::PostprocessArgs),
    /// Score predicted instances against ground truth.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Report JSON path; a CSV summary is written next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "nhk")]
        method: String,
    },
    /// Finite-difference gradient checks for every loss.
    LossCheck(checks::LossCheckArgs),
    /// Trace feature-map shapes through the network.
    Shapes {
        /// JSON network config; defaults to the 5-stage 256x256 layout.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Seeded geometric and colour augmentation of image/label/class triples.
    Augment(AugmentArgs),
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    classes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON augmentation spec; missing fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    let result = match cli.command {
        Command::GenTargets { labels, out } => targets::run(&labels, &out, threads),
        Command::Postprocess(args) => postprocess::run(&args, threads),
        Command::Evaluate { gt, pred, out, method } => evaluate::run(&gt, &pred, &out, &method, threads),
        Command::LossCheck(args) => checks::loss_check(&args),
        Command::Shapes { config } => checks::shapes(config.as_deref()),
        Command::Augment(a) => augment::run(
            &a.images,
            &a.labels,
            &a.classes,
            &a.out,
            a.seed,
            a.spec.as_deref(),
            threads,
        ),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
