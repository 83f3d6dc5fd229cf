//! `denscore` — density/score estimation toolkit. Subcommands train the set
//! transformer, evaluate estimators against known targets, compute plug-in
//! information functionals, run score-driven Landau particle simulations,
//! and benchmark wall-clock scaling.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//! 4 missing or unreadable artifact.

mod cmds;
mod kv;
mod oracles;
mod output;

use clap::{Args, Parser, Subcommand};
use denscore::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "denscore", version, about = "Joint density and score estimation from samples")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the set-transformer estimator on streamed Gaussian-mixture batches
    Train(TrainArgs),
    /// Mean squared error of an estimated score field against the truth
    EvalScore(EvalArgs),
    /// Mean squared error of an estimated density against the truth
    EvalDensity(EvalArgs),
    /// Plug-in differential entropy from estimated densities
    Entropy(EstArgs),
    /// Plug-in Fisher information from estimated scores
    Fisher(EstArgs),
    /// Plug-in relative Fisher information against a reference score field
    Rfi(RfiArgs),
    /// Score-driven particle run of the homogeneous Landau equation
    Landau(LandauArgs),
    /// Wall-clock scaling sweep for kernel and transformer estimators
    Bench(BenchArgs),
    /// Dump one attention block as JSON with a Gaussian-kernel comparison
    ExportAttention(ExportArgs),
}

/// Flags every subcommand shares. Settings resolve as
/// built-in default < `--config` file < explicit flag.
#[derive(Args)]
struct Common {
    /// key = value settings file
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (default: $DENSCORE_OUT or the working directory)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Architecture profile: desk | default
    #[arg(long)]
    profile: Option<String>,
    /// Parameter precision: f32 | f64
    #[arg(long)]
    dtype: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    /// Mixtures per optimizer step
    #[arg(long)]
    batch: Option<usize>,
    /// Context points per mixture
    #[arg(long = "n_x")]
    n_x: Option<usize>,
    /// Query points per mixture
    #[arg(long = "n_y")]
    n_y: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Convex weight between density and score loss
    #[arg(long)]
    alpha: Option<f64>,
    /// Training dimension
    #[arg(long)]
    d: Option<usize>,
    /// Cycle the dimension over this comma list instead of fixing d
    #[arg(long = "mixed_d")]
    mixed_d: Option<String>,
    /// Fewest mixture modes per batch
    #[arg(long = "k_lo")]
    k_lo: Option<usize>,
    /// Most mixture modes per batch
    #[arg(long = "k_hi")]
    k_hi: Option<usize>,
    /// Checkpoint cadence in steps (0 = only at the end)
    #[arg(long = "checkpoint_every")]
    checkpoint_every: Option<usize>,
    /// Continue from this checkpoint instead of a fresh initialization
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
    /// Also write a loss-curve SVG
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// transformer | kde | sd-kde-emp | sd-kde-learned | sd-kde-autograd | sm
    #[arg(long)]
    oracle: Option<String>,
    /// Target family: gmm | laplace
    #[arg(long)]
    dist: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    /// Sample sizes to sweep, comma separated
    #[arg(long)]
    ns: Option<String>,
    /// Queries per trial (gmm only; laplace evaluates at the sample)
    #[arg(long = "n_y")]
    n_y: Option<usize>,
    /// Mixture modes (gmm)
    #[arg(long)]
    k: Option<usize>,
    /// Laplace scale
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// silverman | silverman-unit | a positive number
    #[arg(long)]
    bandwidth: Option<String>,
    /// Trained weights for the transformer-backed oracles
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Also write an MSE-vs-n SVG
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct EstArgs {
    #[command(flatten)]
    common: Common,
    /// transformer | kde | sd-kde-emp | sd-kde-learned | sd-kde-autograd | sm
    #[arg(long)]
    oracle: Option<String>,
    /// Target family: gmm | laplace
    #[arg(long)]
    dist: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    /// Sample size
    #[arg(long)]
    n: Option<usize>,
    /// Mixture modes (gmm)
    #[arg(long)]
    k: Option<usize>,
    /// Laplace scale
    #[arg(long)]
    scale: Option<f64>,
    /// silverman | silverman-unit | a positive number
    #[arg(long)]
    bandwidth: Option<String>,
    /// Trained weights for the transformer-backed oracles
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct RfiArgs {
    #[command(flatten)]
    est: EstArgs,
    /// Reference score field: standard-normal | fit-gaussian | true
    #[arg(long)]
    reference: Option<String>,
}

#[derive(Args)]
struct LandauArgs {
    #[command(flatten)]
    common: Common,
    /// Collision exponent: 0 (Maxwell) or -3 (Coulomb)
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Particle count
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Initial Gaussian variances, comma separated, length d
    #[arg(long = "init_vars")]
    init_vars: Option<String>,
    /// Score oracle: gaussian-fit | kde | transformer
    #[arg(long)]
    oracle: Option<String>,
    /// silverman | silverman-unit | a positive number (kde oracle)
    #[arg(long)]
    bandwidth: Option<String>,
    /// Trained weights for the transformer oracle
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Score the transformer by differentiating its density head
    #[arg(long)]
    autograd: bool,
    /// Also write a covariance-relaxation SVG
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Sample sizes to time, comma separated
    #[arg(long)]
    ns: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    /// What to time: kde | transformer | both
    #[arg(long)]
    what: Option<String>,
    /// Architecture for fresh transformer weights: desk | default
    #[arg(long)]
    profile: Option<String>,
    /// Precision for fresh transformer weights: f32 | f64
    #[arg(long)]
    dtype: Option<String>,
    /// Time these trained weights instead of a fresh initialization
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Also write a log-log timing SVG
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    /// Trained weights to inspect
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Block index: encoder blocks first, then decoder blocks
    #[arg(long)]
    layer: Option<usize>,
    /// Context points
    #[arg(long)]
    n: Option<usize>,
    /// Query points
    #[arg(long = "n_y")]
    n_y: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Mixture modes of the example drawn for inspection
    #[arg(long)]
    k: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape(_) => 2,
        Error::Numeric(_) | Error::NonFinite(_) => 3,
        Error::Checkpoint(_) | Error::Io(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Train(a) => cmds::run_train(a),
        Cmd::EvalScore(a) => cmds::run_eval(a, true),
        Cmd::EvalDensity(a) => cmds::run_eval(a, false),
        Cmd::Entropy(a) => cmds::run_entropy(a),
        Cmd::Fisher(a) => cmds::run_fisher(a),
        Cmd::Rfi(a) => cmds::run_rfi(a),
        Cmd::Landau(a) => cmds::run_landau(a),
        Cmd::Bench(a) => cmds::run_bench(a),
        Cmd::ExportAttention(a) => cmds::run_export_attention(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
