mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use spectra_core::ErrorKind;

#[derive(Parser, Debug)]
#[command(name = "spectra", version, about = "Latent kernel graph models with targetable spectral dimension")]
struct Cli {
    /// Worker threads for sweeps and studies (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hold out edges while keeping the training graph connected.
    Split(SplitArgs),
    /// Fit one model at a fixed entropy weight.
    Train(TrainArgs),
    /// Find the entropy weight that reaches a target d_spec, then retrain.
    Calibrate(CalibrateArgs),
    /// Trace the capacity frontier over an adaptive η grid.
    Sweep(SweepArgs),
    /// Export nested spectral prefixes of a fitted checkpoint.
    Prefix(PrefixArgs),
    /// Paired anchor-versus-calibrated study across targets and rank caps.
    Overparam(OverparamArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SeedArg {
    /// Master seed.
    #[arg(long, env = "SPECTRA_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 6000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    /// Negatives drawn per positive at every step.
    #[arg(long, default_value_t = 5)]
    pub neg_ratio: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub reg_weight: f64,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args, Debug, Serialize)]
pub struct SplitArgs {
    /// Edge list: two node tokens per line, `#` comments; `.csv` files are
    /// read as comma-separated.
    #[arg(long)]
    pub edges: PathBuf,
    /// Fraction of edges to hold out.
    #[arg(long, default_value_t = 0.5)]
    pub fraction: f64,
    /// Restrict to the largest connected component.
    #[arg(long)]
    pub lcc: bool,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub eta: f64,
    #[arg(long)]
    pub rank_cap: usize,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub rank_cap: usize,
    #[arg(long)]
    pub target_dspec: f64,
    /// Relative tolerance on the achieved d_spec.
    #[arg(long, default_value_t = 0.02)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eta_step: f64,
    #[arg(long, default_value_t = 4.0)]
    pub eta_max_abs: f64,
    #[arg(long, default_value_t = 40)]
    pub max_probes: usize,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![64, 128, 256])]
    pub rank_caps: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0, 1, 2])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = -0.25, allow_negative_numbers = true)]
    pub eta_min: f64,
    #[arg(long, default_value_t = 0.25, allow_negative_numbers = true)]
    pub eta_max: f64,
    #[arg(long, default_value_t = 0.02)]
    pub step_init: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub step_min: f64,
    #[arg(long, default_value_t = 0.05)]
    pub step_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eta_bin_width: f64,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PrefixArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prefix sizes, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct OverparamArgs {
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![16.0, 32.0, 64.0])]
    pub targets: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![64, 128, 256])]
    pub rank_caps: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub n_seeds: u64,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Prefix(a) => commands::prefix(a),
        Command::Overparam(a) => commands::overparam(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
