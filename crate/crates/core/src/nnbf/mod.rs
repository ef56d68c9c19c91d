//! The unsupervised neural beamformer: network assembly, training loop,
//! sum-rate sweep evaluation, and checkpointing.

pub mod checkpoint;
pub mod eval;
pub mod graph;
pub mod train;

pub use graph::{beamformer_to_tensor, channel_input_tensor, nnbf_loss, normalize_rx_power};

use crate::autodiff::layers::{BatchNorm1dLayer, Conv1dLayer, LinearLayer, Mode};
use crate::autodiff::{gradcheck, no_grad, ops, Tensor};
use crate::beamform::{BeamformerSet, RateWeights};
use crate::channel::{ChannelBatch, SystemDims};
use crate::rng::{rng_for, stream};
use crate::{Error, Result};

/// Default width of the hidden fully connected layer.
pub const DEFAULT_HIDDEN_WIDTH: usize = 1024;

/// Beamforming network: two conv/batchnorm/GELU blocks that double channels
/// while halving the subcarrier axis (2 -> 16 -> 32 channels, K -> K/4
/// samples), a flatten to width 8NMK, two fully connected layers with a GELU
/// between, and per-receive-antenna power normalization on the output.
///
/// The input is the channel batch reshaped to (B*N*M, 2, K) with the IQ
/// components as the two channels; batch normalization therefore pools its
/// statistics over all antenna pairs.
pub struct NnbfNetwork {
    pub dims: SystemDims,
    pub hidden_width: usize,
    /// When set, log10(sigma^2) is appended to the flattened features, and
    /// every forward pass needs per-item noise variances.
    pub sigma_feature: bool,
    conv1: Conv1dLayer,
    bn1: BatchNorm1dLayer,
    conv2: Conv1dLayer,
    bn2: BatchNorm1dLayer,
    fc1: LinearLayer,
    fc2: LinearLayer,
}

/// Flatten width after the conv stack: N * M * 32 * (K/4) = 8NMK.
pub fn flatten_width(dims: &SystemDims) -> usize {
    8 * dims.n_ues * dims.m_rx * dims.k_subcarriers
}

/// Build the network with deterministic fan-in-uniform initialization.
pub fn build_network(dims: &SystemDims, hidden_width: usize, seed: u64) -> Result<NnbfNetwork> {
    build_network_with(dims, hidden_width, false, seed)
}

/// [`build_network`] with the optional noise-variance input feature.
pub fn build_network_with(
    dims: &SystemDims,
    hidden_width: usize,
    sigma_feature: bool,
    seed: u64,
) -> Result<NnbfNetwork> {
    if dims.k_subcarriers % 4 != 0 {
        return Err(Error::Config(format!(
            "subcarrier count {} must be divisible by 4 (two stride-2 blocks)",
            dims.k_subcarriers
        )));
    }
    if hidden_width == 0 {
        return Err(Error::Config("hidden width must be >= 1".into()));
    }
    let mut rng = rng_for(seed, &[stream::NET_INIT]);
    let conv1 = Conv1dLayer::new(2, 16, 3, 2, 1, &mut rng)?;
    let bn1 = BatchNorm1dLayer::new(16);
    let conv2 = Conv1dLayer::new(16, 32, 3, 2, 1, &mut rng)?;
    let bn2 = BatchNorm1dLayer::new(32);
    let fc_in = flatten_width(dims) + usize::from(sigma_feature);
    let fc1 = LinearLayer::new(fc_in, hidden_width, &mut rng);
    let fc2 = LinearLayer::new(
        hidden_width,
        2 * dims.n_ues * dims.m_rx * dims.k_subcarriers,
        &mut rng,
    );
    Ok(NnbfNetwork {
        dims: *dims,
        hidden_width,
        sigma_feature,
        conv1,
        bn1,
        conv2,
        bn2,
        fc1,
        fc2,
    })
}

impl NnbfNetwork {
    /// Trainable parameters, in the fixed (name, tensor) order used by the
    /// optimizer and the checkpoint format.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        vec![
            ("conv1.weight".into(), self.conv1.weight.clone()),
            ("conv1.bias".into(), self.conv1.bias.clone()),
            ("bn1.gamma".into(), self.bn1.gamma.clone()),
            ("bn1.beta".into(), self.bn1.beta.clone()),
            ("conv2.weight".into(), self.conv2.weight.clone()),
            ("conv2.bias".into(), self.conv2.bias.clone()),
            ("bn2.gamma".into(), self.bn2.gamma.clone()),
            ("bn2.beta".into(), self.bn2.beta.clone()),
            ("fc1.weight".into(), self.fc1.weight.clone()),
            ("fc1.bias".into(), self.fc1.bias.clone()),
            ("fc2.weight".into(), self.fc2.weight.clone()),
            ("fc2.bias".into(), self.fc2.bias.clone()),
        ]
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters()
            .into_iter()
            .map(|(_, t)| t)
            .collect()
    }

    /// Running batchnorm statistics, named for the checkpoint.
    pub fn named_buffers(&self) -> Vec<(String, Vec<f64>)> {
        vec![
            ("bn1.running_mean".into(), self.bn1.running_mean.clone()),
            ("bn1.running_var".into(), self.bn1.running_var.clone()),
            ("bn2.running_mean".into(), self.bn2.running_mean.clone()),
            ("bn2.running_var".into(), self.bn2.running_var.clone()),
        ]
    }

    pub fn set_buffer(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let slot = match name {
            "bn1.running_mean" => &mut self.bn1.running_mean,
            "bn1.running_var" => &mut self.bn1.running_var,
            "bn2.running_mean" => &mut self.bn2.running_mean,
            "bn2.running_var" => &mut self.bn2.running_var,
            _ => return Err(Error::Format(format!("unknown buffer {name}"))),
        };
        if slot.len() != values.len() {
            return Err(Error::Format(format!(
                "buffer {name} has {} entries, expected {}",
                values.len(),
                slot.len()
            )));
        }
        *slot = values;
        Ok(())
    }

    fn check_input(&self, h: &ChannelBatch, sigma2: Option<&[f64]>) -> Result<()> {
        let d = h.dims;
        if (d.n_ues, d.m_rx, d.k_subcarriers)
            != (self.dims.n_ues, self.dims.m_rx, self.dims.k_subcarriers)
        {
            return Err(Error::Shape(format!(
                "channel dims {d:?} do not match network dims {:?}",
                self.dims
            )));
        }
        match sigma2 {
            Some(s) if s.len() != d.batch => Err(Error::Shape(format!(
                "need {} noise variances, got {}",
                d.batch,
                s.len()
            ))),
            None if self.sigma_feature => Err(Error::Contract(
                "this network takes the noise variance as an input feature; \
                 pass per-item sigma^2 values"
                    .into(),
            )),
            _ => Ok(()),
        }
    }

    /// Forward pass producing the normalized (B, N, M, K, 2) weight tensor
    /// inside the autodiff graph. `sigma2` is only consulted when the
    /// network was built with the noise-variance input feature.
    pub fn forward_graph(
        &mut self,
        h: &ChannelBatch,
        mode: Mode,
        sigma2: Option<&[f64]>,
    ) -> Result<Tensor> {
        self.check_input(h, sigma2)?;
        let batch = h.dims.batch;
        let dims = self.dims;

        let x = channel_input_tensor(h);
        let x = self.conv1.forward(&x)?;
        let x = self.bn1.forward(&x, mode)?;
        let x = ops::gelu(&x);
        let x = self.conv2.forward(&x)?;
        let x = self.bn2.forward(&x, mode)?;
        let x = ops::gelu(&x);

        let mut features = x.reshape(&[batch, flatten_width(&dims)]);
        if self.sigma_feature {
            let sigma = sigma2.expect("checked in check_input");
            let extra = Tensor::constant(&[batch, 1], sigma.iter().map(|s| s.log10()).collect());
            features = ops::concat_cols(&features, &extra)?;
        }

        let x = self.fc1.forward(&features)?;
        let x = ops::gelu(&x);
        let x = self.fc2.forward(&x)?;
        let w = x.reshape(&[batch, dims.n_ues, dims.m_rx, dims.k_subcarriers, 2]);
        normalize_rx_power(&w)
    }

    /// Eval-mode forward that materializes the power-normalized weights.
    pub fn forward_beamformer(&mut self, h: &ChannelBatch) -> Result<BeamformerSet> {
        self.forward_beamformer_with(h, None)
    }

    /// [`Self::forward_beamformer`] with explicit noise variances, needed by
    /// networks built with the sigma input feature.
    pub fn forward_beamformer_with(
        &mut self,
        h: &ChannelBatch,
        sigma2: Option<&[f64]>,
    ) -> Result<BeamformerSet> {
        let tensor = no_grad(|| self.forward_graph(h, Mode::Eval, sigma2))?;
        graph::tensor_to_beamformer(&tensor, h.dims)
    }

    /// Central finite-difference check of the full loss gradient at the
    /// network's current parameters, using a deterministic eval-mode forward.
    pub fn finite_difference_check(
        &mut self,
        h: &ChannelBatch,
        sigma2: &[f64],
        alpha: &RateWeights,
        step: f64,
        tolerance: f64,
    ) -> Result<gradcheck::GradCheckReport> {
        let params = self.named_parameters();
        let cell = std::cell::RefCell::new(self);
        gradcheck::finite_difference_check(&params, step, tolerance, move || {
            let mut net = cell.borrow_mut();
            let sigma = if net.sigma_feature {
                Some(sigma2)
            } else {
                None
            };
            let w = net.forward_graph(h, Mode::Eval, sigma)?;
            nnbf_loss(&w, h, sigma2, alpha)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamform::trace_power;
    use crate::channel::{generate_batch, DelayProfile};

    fn dims(n: usize, m: usize, k: usize, b: usize) -> SystemDims {
        SystemDims::new(n, m, k, b).unwrap()
    }

    fn batch_for(d: &SystemDims, seed: u64) -> ChannelBatch {
        generate_batch(d, &DelayProfile::toy(30e-9, 30e3), seed)
    }

    #[test]
    fn fc1_width_is_8nmk() {
        let d = dims(4, 4, 48, 2);
        let net = build_network(&d, 64, 0).unwrap();
        assert_eq!(net.fc1.in_features(), 6144);
        assert_eq!(flatten_width(&d), 6144);
        // Two stride-2 halvings leave 32 channels x K/4 samples per pair.
        assert_eq!(32 * (48 / 4), 8 * 48);
    }

    #[test]
    fn build_rejects_bad_subcarrier_count() {
        let d = dims(2, 2, 10, 1);
        assert!(matches!(build_network(&d, 32, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let d = dims(2, 3, 12, 2);
        let a = build_network(&d, 32, 9).unwrap();
        let b = build_network(&d, 32, 9).unwrap();
        for ((_, pa), (_, pb)) in a.named_parameters().iter().zip(b.named_parameters().iter()) {
            assert_eq!(pa.data(), pb.data());
        }
        let c = build_network(&d, 32, 10).unwrap();
        let differs = a
            .named_parameters()
            .iter()
            .zip(c.named_parameters().iter())
            .any(|((_, pa), (_, pc))| pa.data() != pc.data());
        assert!(differs);
    }

    #[test]
    fn forward_shape_and_feasibility() {
        let d = dims(4, 8, 48, 8);
        let mut net = build_network(&d, 64, 1).unwrap();
        let h = batch_for(&d, 2);
        let w = net.forward_beamformer(&h).unwrap();
        assert_eq!(w.dims, d);
        for b in 0..d.batch {
            for k in 0..d.k_subcarriers {
                assert!((trace_power(&w, b, k) - d.m_rx as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn eval_forward_is_bit_deterministic() {
        let d = dims(2, 4, 12, 3);
        let mut net = build_network(&d, 32, 3).unwrap();
        let h = batch_for(&d, 4);
        let w1 = net.forward_beamformer(&h).unwrap();
        let w2 = net.forward_beamformer(&h).unwrap();
        assert_eq!(w1, w2);
    }

    #[test]
    fn forward_rejects_mismatched_dims() {
        let d = dims(2, 4, 12, 3);
        let other = dims(3, 4, 12, 3);
        let mut net = build_network(&d, 32, 5).unwrap();
        let h = batch_for(&other, 6);
        assert!(net.forward_beamformer(&h).is_err());
    }

    #[test]
    fn sigma_feature_requires_noise_variances() {
        let d = dims(2, 2, 12, 2);
        let mut net = build_network_with(&d, 32, true, 7).unwrap();
        let h = batch_for(&d, 8);
        assert!(matches!(
            net.forward_beamformer(&h),
            Err(Error::Contract(_))
        ));
        let w = net.forward_beamformer_with(&h, Some(&[0.1, 0.5])).unwrap();
        for b in 0..d.batch {
            for k in 0..d.k_subcarriers {
                assert!((trace_power(&w, b, k) - d.m_rx as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn full_loss_gradient_passes_finite_difference_check() {
        // Toy scale keeps the parameter sweep fast; run one train-mode pass
        // first so the running statistics are non-trivial, then check the
        // deterministic eval-mode path.
        let d = dims(2, 2, 12, 2);
        let mut net = build_network(&d, 16, 11).unwrap();
        let h = batch_for(&d, 12);
        let alpha = RateWeights::uniform(d.n_ues);
        let sigma2 = vec![0.5, 0.1];
        no_grad(|| net.forward_graph(&h, Mode::Train, None)).unwrap();
        let report = net
            .finite_difference_check(&h, &sigma2, &alpha, 1e-5, 1e-4)
            .unwrap();
        assert!(report.passed(), "{report}");
    }
}
