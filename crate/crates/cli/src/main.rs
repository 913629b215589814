mod config;
mod estimate;
mod eval;
mod fit_debug;
mod gradcheck;
mod output;
mod synth;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use config::{List, Settings};
use normjet::evaluation::HeatmapFormat;
use normjet::synth::DensityMode;
use normjet::training::Subnet;
use normjet::{InitMode, Method};

#[derive(Parser)]
#[command(
    name = "normjet",
    version,
    about = "Point-cloud normal estimation with learned top-k jet fitting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cloud, or the desk-scale corpus with --corpus.
    Synth(SynthArgs),
    /// Estimate a normal for every point of a cloud.
    Estimate(EstimateArgs),
    /// Train the weighting network on a list of clouds.
    Train(TrainArgs),
    /// Score normals against ground truth.
    Eval(EvalArgs),
    /// Dump the selection, updated points and fitted surface of one patch.
    FitDebug(FitDebugArgs),
    /// Compare the reverse pass with finite differences on random patches.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// quadric, sphere or dihedral.
    #[arg(long)]
    shape: Option<String>,
    /// Generate the whole train/test corpus into the --out directory.
    #[arg(long)]
    corpus: bool,
    #[arg(long)]
    count: Option<usize>,
    /// Dihedral interior angle in degrees.
    #[arg(long)]
    angle: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    /// Height-field coefficients in jet order, comma separated.
    #[arg(long)]
    coeffs: Option<List<f64>>,
    /// Gaussian noise relative to the bounding-box diagonal.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    density: Option<DensityMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// `.xyz` file, or a directory with --corpus.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    force_center: bool,
    /// Estimate only the points listed in this index file, in its order.
    #[arg(long)]
    indices: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// File listing one shape name per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory holding the listed `.xyz` files (default: the list's directory).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    patches_per_shape: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    force_center: bool,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// standard (random), or zero for the plain-jet starting point.
    #[arg(long)]
    init: Option<InitMode>,
    /// Subnetworks to keep fixed: qst, features, head, update.
    #[arg(long)]
    freeze: Option<List<Subnet>>,
    #[arg(long)]
    qst_widths: Option<List<usize>>,
    #[arg(long)]
    feature_widths: Option<List<usize>>,
    #[arg(long)]
    head_widths: Option<List<usize>>,
    #[arg(long)]
    update_widths: Option<List<usize>>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss trace CSV (default: next to the checkpoint).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Cloud with a sibling `.normals` ground-truth file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Estimated normals for --input.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Shape list for a whole test set.
    #[arg(long)]
    list: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory of `<shape>.normals` estimates for --list.
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    /// Evaluation index file; defaults to a sibling `.pidx` or `.idx`.
    #[arg(long)]
    subset: Option<PathBuf>,
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-point errors CSV (single cloud only).
    #[arg(long)]
    points_out: Option<PathBuf>,
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[arg(long)]
    heatmap_format: Option<HeatmapFormat>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitDebugArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Query point index.
    #[arg(long)]
    point: Option<usize>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    force_center: bool,
    /// Surface grid samples per side.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-array report CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Long flag names of a subcommand, which are also its config keys.
fn config_keys(subcommand: &str) -> Vec<String> {
    let cmd = Cli::command();
    cmd.find_subcommand(subcommand)
        .map(|c| {
            c.get_arguments()
                .filter_map(|a| a.get_long())
                .filter(|l| *l != "config" && *l != "help")
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

fn settings(subcommand: &str, path: &Option<PathBuf>) -> anyhow::Result<Settings> {
    Settings::load(path.as_deref(), &config_keys(subcommand))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => synth::run(&a, &settings("synth", &a.config)?),
        Command::Estimate(a) => estimate::run(&a, &settings("estimate", &a.config)?),
        Command::Train(a) => train::run(&a, &settings("train", &a.config)?),
        Command::Eval(a) => eval::run(&a, &settings("eval", &a.config)?),
        Command::FitDebug(a) => fit_debug::run(&a, &settings("fit-debug", &a.config)?),
        Command::Gradcheck(a) => gradcheck::run(&a, &settings("gradcheck", &a.config)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
