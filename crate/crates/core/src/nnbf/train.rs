//! Unsupervised training: negative mean sum-rate loss, AdamW, and
//! halve-on-plateau learning rate scheduling.
//!
//! The training path consumes only channel tensors and noise variances; no
//! reference beamformer or label enters any gradient.

use super::{build_network_with, nnbf_loss, NnbfNetwork};
use crate::autodiff::layers::Mode;
use crate::autodiff::optim::AdamW;
use crate::autodiff::{backward, no_grad};
use crate::beamform::RateWeights;
use crate::channel::{generate_batch, noise_variance, ChannelBatch, DelayProfile, SystemDims};
use crate::error::NanDiagnostic;
use crate::rng::{mix, rng_for, stream};
use crate::{Error, Result};
use rand::Rng;

/// Every knob of a training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub dims: SystemDims,
    /// SNR grid in dB; each batch item trains at a noise variance drawn
    /// uniformly from this grid, so one model covers the whole sweep.
    pub snr_grid_db: Vec<f64>,
    pub epochs: usize,
    pub lr: f64,
    pub scheduler_patience: usize,
    pub scheduler_factor: f64,
    pub rate_weights: RateWeights,
    pub train_batches: usize,
    pub val_batches: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub hidden_width: usize,
    /// Train every batch item at this single SNR instead of sampling the
    /// grid (per-SNR training mode).
    pub fixed_train_snr_db: Option<f64>,
    /// Feed log10(sigma^2) to the network as an extra input feature.
    pub sigma_feature: bool,
}

impl TrainConfig {
    /// Defaults: lr 1e-4, AdamW weight decay 0.01, plateau patience 3 with
    /// factor 0.5, uniform rate weights, 100 train / 25 validation batches,
    /// SNR grid -15..35 dB in 5 dB steps, 50 epochs.
    pub fn new(dims: SystemDims) -> Self {
        Self {
            dims,
            snr_grid_db: default_snr_grid(),
            epochs: 50,
            lr: 1e-4,
            scheduler_patience: 3,
            scheduler_factor: 0.5,
            rate_weights: RateWeights::uniform(dims.n_ues),
            train_batches: 100,
            val_batches: 25,
            seed: 0,
            weight_decay: 0.01,
            hidden_width: super::DEFAULT_HIDDEN_WIDTH,
            fixed_train_snr_db: None,
            sigma_feature: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if self.scheduler_patience == 0 {
            return Err(Error::Config("scheduler patience must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.scheduler_factor) {
            return Err(Error::Config(format!(
                "scheduler factor must be in (0, 1), got {}",
                self.scheduler_factor
            )));
        }
        if self.snr_grid_db.is_empty() && self.fixed_train_snr_db.is_none() {
            return Err(Error::Config("empty SNR grid".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be >= 1".into()));
        }
        if self.rate_weights.values().len() != self.dims.n_ues {
            return Err(Error::Config(format!(
                "{} rate weights for {} UEs",
                self.rate_weights.values().len(),
                self.dims.n_ues
            )));
        }
        Ok(())
    }
}

/// -15..35 dB in 5 dB steps.
pub fn default_snr_grid() -> Vec<f64> {
    snr_grid(-15.0, 35.0, 5.0)
}

pub fn snr_grid(min_db: f64, max_db: f64, step_db: f64) -> Vec<f64> {
    assert!(step_db > 0.0, "SNR step must be positive");
    let mut grid = Vec::new();
    let mut v = min_db;
    while v <= max_db + 1e-9 {
        grid.push(v);
        v += step_db;
    }
    grid
}

/// Halves the learning rate when the best validation loss has not improved
/// (strictly, by more than 1e-8) for `patience` consecutive epochs; the
/// stagnation counter resets after each reduction.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    patience: usize,
    factor: f64,
    threshold: f64,
    best: Option<f64>,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        Self {
            lr,
            patience,
            factor,
            threshold: 1e-8,
            best: None,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feed one epoch's validation loss; returns the learning rate to use
    /// from the next epoch on.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        match self.best {
            None => self.best = Some(val_loss),
            Some(best) if val_loss < best - self.threshold => {
                self.best = Some(val_loss);
                self.stale = 0;
            }
            Some(_) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    self.lr *= self.factor;
                    self.stale = 0;
                }
            }
        }
        self.lr
    }
}

/// Replay a validation-loss history through a fresh scheduler and return the
/// resulting learning rate.
pub fn lr_schedule_step(current_lr: f64, val_history: &[f64], patience: usize, factor: f64) -> f64 {
    let mut sched = PlateauScheduler::new(current_lr, patience, factor);
    for &v in val_history {
        sched.step(v);
    }
    sched.lr()
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate in effect during this epoch's updates.
    pub lr: f64,
    pub seconds: f64,
}

/// Per-epoch records of a completed run.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// CSV with header `epoch,train_loss,val_loss,lr,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds
            ));
        }
        out
    }
}

/// Source of training batches: a fixed dataset (reproducible, the default)
/// or fresh channel realizations regenerated every epoch.
pub enum TrainData<'a> {
    Fixed(&'a [ChannelBatch]),
    Regenerate {
        profile: &'a DelayProfile,
        batches_per_epoch: usize,
    },
}

fn check_dims(dims: &SystemDims, data: &[ChannelBatch], what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config(format!("{what} dataset is empty")));
    }
    if let Some(bad) = data.iter().find(|b| b.dims != *dims) {
        return Err(Error::Shape(format!(
            "{what} batch dims {:?} do not match configured dims {dims:?}",
            bad.dims
        )));
    }
    Ok(())
}

/// Per-item noise variances for one batch, drawn uniformly from the SNR grid
/// on a stream keyed by (seed, epoch, batch index).
fn draw_sigma2(cfg: &TrainConfig, tag: u64, epoch: usize, batch_idx: usize) -> Vec<f64> {
    if let Some(snr) = cfg.fixed_train_snr_db {
        return vec![noise_variance(snr); cfg.dims.batch];
    }
    let mut rng = rng_for(cfg.seed, &[tag, epoch as u64, batch_idx as u64]);
    (0..cfg.dims.batch)
        .map(|_| noise_variance(cfg.snr_grid_db[rng.gen_range(0..cfg.snr_grid_db.len())]))
        .collect()
}

fn batch_loss(
    net: &mut NnbfNetwork,
    h: &ChannelBatch,
    sigma2: &[f64],
    alpha: &RateWeights,
    mode: Mode,
) -> Result<crate::autodiff::Tensor> {
    let sigma_arg = if net.sigma_feature {
        Some(sigma2)
    } else {
        None
    };
    let w = net.forward_graph(h, mode, sigma_arg)?;
    nnbf_loss(&w, h, sigma2, alpha)
}

/// Train a fresh network under `cfg`. Returns the trained network and the
/// per-epoch history; given identical config and data the result is
/// bit-reproducible (wall-clock column aside).
pub fn train(
    cfg: &TrainConfig,
    train_data: TrainData<'_>,
    val_data: &[ChannelBatch],
) -> Result<(NnbfNetwork, TrainHistory)> {
    cfg.validate()?;
    check_dims(&cfg.dims, val_data, "validation")?;
    if let TrainData::Fixed(batches) = &train_data {
        check_dims(&cfg.dims, batches, "training")?;
    }

    let mut net = build_network_with(
        &cfg.dims,
        cfg.hidden_width,
        cfg.sigma_feature,
        mix(cfg.seed, &[stream::NET_INIT]),
    )?;
    let params = net.parameters();
    let mut opt = AdamW::new(params.clone(), cfg.lr, cfg.weight_decay);
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.scheduler_patience, cfg.scheduler_factor);

    // Validation noise is drawn once so the loss stays comparable across
    // epochs; the scheduler needs a stationary signal.
    let val_sigma2: Vec<Vec<f64>> = (0..val_data.len())
        .map(|i| draw_sigma2(cfg, stream::VAL_SNR, 0, i))
        .collect();

    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        let started = std::time::Instant::now();
        let lr_in_effect = sched.lr();
        opt.set_lr(lr_in_effect);

        let regenerated: Vec<ChannelBatch>;
        let epoch_batches: &[ChannelBatch] = match &train_data {
            TrainData::Fixed(batches) => batches,
            TrainData::Regenerate {
                profile,
                batches_per_epoch,
            } => {
                regenerated = (0..*batches_per_epoch)
                    .map(|i| {
                        generate_batch(
                            &cfg.dims,
                            profile,
                            mix(cfg.seed, &[stream::TRAIN_DATA, epoch as u64, i as u64]),
                        )
                    })
                    .collect();
                &regenerated
            }
        };
        if epoch_batches.is_empty() {
            return Err(Error::Config("no training batches for this epoch".into()));
        }

        let mut train_loss_sum = 0.0;
        for (i, h) in epoch_batches.iter().enumerate() {
            let sigma2 = draw_sigma2(cfg, stream::TRAIN_SNR, epoch, i);
            for p in &params {
                p.zero_grad();
            }
            let loss = batch_loss(&mut net, h, &sigma2, &cfg.rate_weights, Mode::Train)?;
            let loss_value = loss.value();
            if !loss_value.is_finite() {
                let param_norms = net
                    .named_parameters()
                    .iter()
                    .map(|(name, p)| (name.clone(), p.l2_norm()))
                    .collect();
                return Err(Error::NanAbort(NanDiagnostic {
                    epoch,
                    batch: i,
                    loss: loss_value,
                    param_norms,
                }));
            }
            backward(&loss)?;
            opt.step()?;
            train_loss_sum += loss_value;
        }
        let train_loss = train_loss_sum / epoch_batches.len() as f64;

        let mut val_loss_sum = 0.0;
        for (i, h) in val_data.iter().enumerate() {
            let loss =
                no_grad(|| batch_loss(&mut net, h, &val_sigma2[i], &cfg.rate_weights, Mode::Eval))?;
            val_loss_sum += loss.value();
        }
        let val_loss = val_loss_sum / val_data.len() as f64;
        sched.step(val_loss);

        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: lr_in_effect,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_dataset;

    #[test]
    fn scheduler_halves_after_three_stagnant_epochs() {
        let mut sched = PlateauScheduler::new(1e-4, 3, 0.5);
        assert_eq!(sched.step(5.0), 1e-4);
        assert_eq!(sched.step(5.0), 1e-4);
        assert_eq!(sched.step(5.0), 1e-4);
        assert_eq!(sched.step(5.0), 5e-5);
        // Counter reset: three more stagnant epochs before the next halving.
        assert_eq!(sched.step(5.0), 5e-5);
        assert_eq!(sched.step(5.0), 5e-5);
        assert_eq!(sched.step(5.0), 2.5e-5);
    }

    #[test]
    fn scheduler_keeps_lr_while_improving() {
        let mut sched = PlateauScheduler::new(1e-4, 3, 0.5);
        for v in [5.0, 4.0, 3.0, 2.0, 1.0] {
            assert_eq!(sched.step(v), 1e-4);
        }
    }

    #[test]
    fn scheduler_resets_counter_on_improvement() {
        let mut sched = PlateauScheduler::new(1e-4, 3, 0.5);
        sched.step(5.0);
        sched.step(5.0); // stale 1
        sched.step(5.0); // stale 2
        assert_eq!(sched.step(4.0), 1e-4); // improvement resets
        sched.step(4.0);
        sched.step(4.0);
        assert_eq!(sched.step(4.0), 5e-5);
    }

    #[test]
    fn tiny_improvements_count_as_stagnation() {
        let mut sched = PlateauScheduler::new(1e-4, 3, 0.5);
        sched.step(5.0);
        sched.step(5.0 - 1e-9);
        sched.step(5.0 - 2e-9);
        assert_eq!(sched.step(5.0 - 3e-9), 5e-5);
    }

    #[test]
    fn replay_helper_matches_scheduler() {
        let lr = lr_schedule_step(1e-4, &[5.0, 5.0, 5.0, 5.0], 3, 0.5);
        assert_eq!(lr, 5e-5);
        let lr = lr_schedule_step(1e-4, &[5.0, 4.0, 3.0], 3, 0.5);
        assert_eq!(lr, 1e-4);
    }

    #[test]
    fn snr_grid_covers_default_range() {
        let grid = default_snr_grid();
        assert_eq!(grid.len(), 11);
        assert_eq!(grid[0], -15.0);
        assert_eq!(*grid.last().unwrap(), 35.0);
    }

    fn smoke_config() -> (TrainConfig, Vec<ChannelBatch>, Vec<ChannelBatch>) {
        let dims = SystemDims::new(2, 2, 12, 2).unwrap();
        let profile = DelayProfile::toy(30e-9, 30e3);
        let mut cfg = TrainConfig::new(dims);
        cfg.epochs = 1;
        cfg.train_batches = 1;
        cfg.val_batches = 1;
        cfg.hidden_width = 16;
        cfg.seed = 3;
        let train = generate_dataset(&dims, &profile, cfg.seed, 0, 1);
        let val = generate_dataset(&dims, &profile, cfg.seed, 1, 1);
        (cfg, train, val)
    }

    #[test]
    fn one_epoch_smoke_run() {
        let (cfg, train_set, val_set) = smoke_config();
        let (_, history) = train(&cfg, TrainData::Fixed(&train_set), &val_set).unwrap();
        assert_eq!(history.records.len(), 1);
        assert!(history.records[0].train_loss.is_finite());
        assert!(history.records[0].val_loss.is_finite());
        assert_eq!(history.records[0].lr, 1e-4);
    }

    #[test]
    fn training_is_reproducible() {
        let (mut cfg, train_set, val_set) = smoke_config();
        cfg.epochs = 2;
        let (net_a, hist_a) = train(&cfg, TrainData::Fixed(&train_set), &val_set).unwrap();
        let (net_b, hist_b) = train(&cfg, TrainData::Fixed(&train_set), &val_set).unwrap();
        for (ra, rb) in hist_a.records.iter().zip(&hist_b.records) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.val_loss.to_bits(), rb.val_loss.to_bits());
            assert_eq!(ra.lr.to_bits(), rb.lr.to_bits());
        }
        for ((_, pa), (_, pb)) in net_a
            .named_parameters()
            .iter()
            .zip(net_b.named_parameters().iter())
        {
            assert_eq!(pa.data(), pb.data());
        }
    }

    #[test]
    fn regenerated_data_trains_too() {
        let (mut cfg, _, val_set) = smoke_config();
        cfg.epochs = 2;
        let profile = DelayProfile::toy(30e-9, 30e3);
        let (_, history) = train(
            &cfg,
            TrainData::Regenerate {
                profile: &profile,
                batches_per_epoch: 2,
            },
            &val_set,
        )
        .unwrap();
        assert_eq!(history.records.len(), 2);
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let (cfg, train_set, val_set) = smoke_config();
        let (_, history) = train(&cfg, TrainData::Fixed(&train_set), &val_set).unwrap();
        let csv = history.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,train_loss,val_loss,lr,seconds"));
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn fixed_snr_training_mode() {
        let (mut cfg, train_set, val_set) = smoke_config();
        cfg.fixed_train_snr_db = Some(20.0);
        let (_, history) = train(&cfg, TrainData::Fixed(&train_set), &val_set).unwrap();
        assert!(history.records[0].train_loss.is_finite());
    }

    #[test]
    fn sigma_feature_training_mode() {
        let (mut cfg, train_set, val_set) = smoke_config();
        cfg.sigma_feature = true;
        let (net, history) = train(&cfg, TrainData::Fixed(&train_set), &val_set).unwrap();
        assert!(net.sigma_feature);
        assert!(history.records[0].train_loss.is_finite());
    }
}
