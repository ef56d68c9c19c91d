//! Command-line experiments for the uplink beamforming toolkit: dataset
//! generation, unsupervised training, SNR sweep evaluation, and computation
//! time benchmarks.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

mod commands;
mod config;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use config::{ConfigError, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nnbf",
    version,
    about = "Uplink MU-SIMO beamforming experiments: neural beamformer vs ZFBF/MMSE"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each one overrides the config-file key
/// of the same name.
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Config file with flat `key = value` lines and `#` comments
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment seed; all randomness derives from it [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts [default: out]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory (train.nnbf / val.nnbf) [default: data]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of single-antenna UEs (N) [default: 4]
    #[arg(long)]
    ues: Option<usize>,
    /// Number of receive antennas (M) [default: 8]
    #[arg(long)]
    rx: Option<usize>,
    /// Resource blocks; K = 12 subcarriers each [default: 4]
    #[arg(long)]
    rb: Option<usize>,
    /// Channel matrices per batch (B) [default: 8]
    #[arg(long)]
    batch: Option<usize>,
    /// SNR grid lower edge in dB [default: -15]
    #[arg(long)]
    snr_min: Option<f64>,
    /// SNR grid upper edge in dB [default: 35]
    #[arg(long)]
    snr_max: Option<f64>,
    /// SNR grid step in dB [default: 5]
    #[arg(long)]
    snr_step: Option<f64>,
    /// Training epochs [default: 50]
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate [default: 1e-4]
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs of validation stagnation before the learning rate halves [default: 3]
    #[arg(long)]
    patience: Option<usize>,
    /// Learning-rate reduction factor on plateau [default: 0.5]
    #[arg(long)]
    factor: Option<f64>,
    /// AdamW decoupled weight decay [default: 0.01]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Hidden width of the first fully connected layer [default: 1024]
    #[arg(long)]
    hidden: Option<usize>,
    /// Training batches per epoch [default: 100]
    #[arg(long)]
    train_batches: Option<usize>,
    /// Validation batches [default: 25]
    #[arg(long)]
    val_batches: Option<usize>,
    /// Delay profile: tdl-a or toy [default: tdl-a]
    #[arg(long)]
    profile: Option<String>,
    /// Delay spread in nanoseconds [default: 30]
    #[arg(long)]
    delay_spread_ns: Option<f64>,
    /// Subcarrier spacing in kHz [default: 30]
    #[arg(long)]
    spacing_khz: Option<f64>,
    /// Regenerate fresh training channels every epoch instead of using the
    /// persisted dataset
    #[arg(long)]
    regen: bool,
    /// Train at this single SNR (dB) instead of sampling the grid
    #[arg(long)]
    train_snr: Option<f64>,
    /// Feed log10(sigma^2) to the network as an extra input feature
    #[arg(long)]
    sigma_feature: bool,
    /// UE counts for the computation-time benchmark (comma separated) [default: 4,8,16,32,48]
    #[arg(long, value_delimiter = ',')]
    bench_ues: Option<Vec<usize>>,
    /// Receive antennas for the benchmark [default: 64]
    #[arg(long)]
    bench_rx: Option<usize>,
    /// Timed repetitions per benchmark point (minimum 10) [default: 20]
    #[arg(long)]
    bench_reps: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained model checkpoint; without it only the baselines run
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Antenna sweep preset: `one-to-one` (N=M in {4,8,12}) or `one-to-four`
    /// (8x32, 16x64); omit for the configured single geometry
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and persist train/validation channel datasets
    GenData(CommonArgs),
    /// Train the neural beamformer and write checkpoint + history CSV
    Train(CommonArgs),
    /// Sum-rate sweep of nnbf/zfbf/mmse across the SNR grid
    Eval(EvalArgs),
    /// Time per-batch beamformer computation across UE counts
    Bench(CommonArgs),
}

/// Failures after argument parsing, split by exit code.
pub enum CliError {
    /// Exit code 1: bad flags, bad config, missing inputs.
    Usage(String),
    /// Exit code 2: NaN abort, singularity storm, failed writes.
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.0)
    }
}

fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = &args.data {
        cfg.data_dir = v.clone();
    }
    if let Some(v) = args.ues {
        cfg.ues = v;
    }
    if let Some(v) = args.rx {
        cfg.rx = v;
    }
    if let Some(v) = args.rb {
        cfg.resource_blocks = v;
    }
    if let Some(v) = args.batch {
        cfg.batch = v;
    }
    if let Some(v) = args.snr_min {
        cfg.snr_min_db = v;
    }
    if let Some(v) = args.snr_max {
        cfg.snr_max_db = v;
    }
    if let Some(v) = args.snr_step {
        cfg.snr_step_db = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.patience {
        cfg.patience = v;
    }
    if let Some(v) = args.factor {
        cfg.factor = v;
    }
    if let Some(v) = args.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = args.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = args.train_batches {
        cfg.train_batches = v;
    }
    if let Some(v) = args.val_batches {
        cfg.val_batches = v;
    }
    if let Some(v) = &args.profile {
        cfg.profile = v.to_lowercase();
    }
    if let Some(v) = args.delay_spread_ns {
        cfg.delay_spread_ns = v;
    }
    if let Some(v) = args.spacing_khz {
        cfg.spacing_khz = v;
    }
    if args.regen {
        cfg.regen = true;
    }
    if let Some(v) = args.train_snr {
        cfg.train_snr_db = Some(v);
    }
    if args.sigma_feature {
        cfg.sigma_feature = true;
    }
    if let Some(v) = &args.bench_ues {
        cfg.bench_ues = v.clone();
    }
    if let Some(v) = args.bench_rx {
        cfg.bench_rx = v;
    }
    if let Some(v) = args.bench_reps {
        cfg.bench_reps = v;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(args) => commands::gen_data(&resolve_config(&args)?),
        Command::Train(args) => commands::train(&resolve_config(&args)?),
        Command::Eval(args) => {
            let cfg = resolve_config(&args.common)?;
            commands::eval(&cfg, args.checkpoint.as_deref(), args.preset.as_deref())
        }
        Command::Bench(args) => commands::bench(&resolve_config(&args)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
