//! Experiment configuration: defaults, flat `key = value` config files, and
//! CLI flag overrides. Precedence: defaults < config file < flags.

use nnbf_core::beamform::RateWeights;
use nnbf_core::channel::{DelayProfile, SystemDims};
use nnbf_core::nnbf::train::{snr_grid, TrainConfig};
use std::path::{Path, PathBuf};

/// All experiment knobs plus system metadata. Defaults mirror the reference
/// system table: TDL-A profile, 4 resource blocks of 12 subcarriers, 30 ns
/// delay spread, 30 kHz spacing, 10 Hz Doppler, 500 us TTI, QPSK, SNR range
/// [-15, 35] dB.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data_dir: PathBuf,
    pub ues: usize,
    pub rx: usize,
    pub resource_blocks: usize,
    pub batch: usize,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub snr_step_db: f64,
    pub epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub train_batches: usize,
    pub val_batches: usize,
    pub profile: String,
    pub delay_spread_ns: f64,
    pub spacing_khz: f64,
    pub regen: bool,
    pub train_snr_db: Option<f64>,
    pub sigma_feature: bool,
    pub bench_ues: Vec<usize>,
    pub bench_rx: usize,
    pub bench_reps: usize,
    // Recorded system metadata; the synthesis math does not consume these.
    pub doppler_hz: f64,
    pub tti_us: f64,
    pub modulation: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "nnbf-experiment".into(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            data_dir: PathBuf::from("data"),
            ues: 4,
            rx: 8,
            resource_blocks: 4,
            batch: 8,
            snr_min_db: -15.0,
            snr_max_db: 35.0,
            snr_step_db: 5.0,
            epochs: 50,
            lr: 1e-4,
            patience: 3,
            factor: 0.5,
            weight_decay: 0.01,
            hidden: nnbf_core::nnbf::DEFAULT_HIDDEN_WIDTH,
            train_batches: 100,
            val_batches: 25,
            profile: "tdl-a".into(),
            delay_spread_ns: 30.0,
            spacing_khz: 30.0,
            regen: false,
            train_snr_db: None,
            sigma_feature: false,
            bench_ues: vec![4, 8, 16, 32, 48],
            bench_rx: 64,
            bench_reps: 20,
            doppler_hz: 10.0,
            tti_us: 500.0,
            modulation: "qpsk".into(),
        }
    }
}

/// A usage/configuration problem; maps to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError(format!("invalid value {value:?} for key {key:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|part| parse::<usize>(key, part))
        .collect()
}

impl ExperimentConfig {
    /// Apply one `key = value` pair; keys match the CLI flag names.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "name" => self.name = value.trim().to_string(),
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out_dir = PathBuf::from(value.trim()),
            "data" => self.data_dir = PathBuf::from(value.trim()),
            "ues" => self.ues = parse(key, value)?,
            "rx" => self.rx = parse(key, value)?,
            "rb" => self.resource_blocks = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "snr-min" => self.snr_min_db = parse(key, value)?,
            "snr-max" => self.snr_max_db = parse(key, value)?,
            "snr-step" => self.snr_step_db = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "factor" => self.factor = parse(key, value)?,
            "weight-decay" => self.weight_decay = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "train-batches" => self.train_batches = parse(key, value)?,
            "val-batches" => self.val_batches = parse(key, value)?,
            "profile" => self.profile = value.trim().to_lowercase(),
            "delay-spread-ns" => self.delay_spread_ns = parse(key, value)?,
            "spacing-khz" => self.spacing_khz = parse(key, value)?,
            "regen" => self.regen = parse(key, value)?,
            "train-snr" => self.train_snr_db = Some(parse(key, value)?),
            "sigma-feature" => self.sigma_feature = parse(key, value)?,
            "bench-ues" => self.bench_ues = parse_list(key, value)?,
            "bench-rx" => self.bench_rx = parse(key, value)?,
            "bench-reps" => self.bench_reps = parse(key, value)?,
            "doppler-hz" => self.doppler_hz = parse(key, value)?,
            "tti-us" => self.tti_us = parse(key, value)?,
            "modulation" => self.modulation = value.trim().to_string(),
            _ => return Err(ConfigError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Load overrides from a flat UTF-8 `key = value` file with `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!(
                    "{}:{}: expected `key = value`, got {raw:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn k_subcarriers(&self) -> usize {
        12 * self.resource_blocks
    }

    pub fn dims(&self) -> Result<SystemDims, ConfigError> {
        SystemDims::new(self.ues, self.rx, self.k_subcarriers(), self.batch)
            .map_err(|e| ConfigError(e.to_string()))
    }

    pub fn delay_profile(&self) -> Result<DelayProfile, ConfigError> {
        let spread = self.delay_spread_ns * 1e-9;
        let spacing = self.spacing_khz * 1e3;
        match self.profile.as_str() {
            "tdl-a" | "tdla" => Ok(DelayProfile::tdl_a(spread, spacing)),
            "toy" => Ok(DelayProfile::toy(spread, spacing)),
            other => Err(ConfigError(format!(
                "unknown profile {other:?} (expected tdl-a or toy)"
            ))),
        }
    }

    pub fn snr_grid(&self) -> Result<Vec<f64>, ConfigError> {
        if self.snr_step_db <= 0.0 || self.snr_max_db < self.snr_min_db {
            return Err(ConfigError(format!(
                "invalid SNR grid: min {} max {} step {}",
                self.snr_min_db, self.snr_max_db, self.snr_step_db
            )));
        }
        Ok(snr_grid(self.snr_min_db, self.snr_max_db, self.snr_step_db))
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let dims = self.dims()?;
        let mut cfg = TrainConfig::new(dims);
        cfg.snr_grid_db = self.snr_grid()?;
        cfg.epochs = self.epochs;
        cfg.lr = self.lr;
        cfg.scheduler_patience = self.patience;
        cfg.scheduler_factor = self.factor;
        cfg.rate_weights = RateWeights::uniform(dims.n_ues);
        cfg.train_batches = self.train_batches;
        cfg.val_batches = self.val_batches;
        cfg.seed = self.seed;
        cfg.weight_decay = self.weight_decay;
        cfg.hidden_width = self.hidden;
        cfg.fixed_train_snr_db = self.train_snr_db;
        cfg.sigma_feature = self.sigma_feature;
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_set_path(&self) -> PathBuf {
        self.data_dir.join("train.nnbf")
    }

    pub fn val_set_path(&self) -> PathBuf {
        self.data_dir.join("val.nnbf")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("checkpoint.nnbw")
    }

    pub fn history_path(&self) -> PathBuf {
        self.out_dir.join("history.csv")
    }
}
