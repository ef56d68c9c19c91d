//! Differentiable bridge between real tensors and the beamforming metrics.
//!
//! Beamforming weights travel through the graph as a real tensor of shape
//! (B, N, M, K, 2) with the trailing axis holding the (re, im) pair. The two
//! operations here are the network's output stage (per-receive-antenna power
//! normalization) and the training objective (negative mean weighted
//! sum-rate), both with hand-derived backward passes.

use crate::autodiff::Tensor;
use crate::beamform::{BeamformerSet, RateWeights};
use crate::channel::ChannelBatch;
use crate::linalg::Complex;
use crate::{Error, Result};

/// Interpret a (B, N, M, K, 2) tensor shape; errors on anything else.
fn weight_shape(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let shape = t.shape();
    if shape.len() != 5 || shape[4] != 2 {
        return Err(Error::Shape(format!(
            "expected a (B, N, M, K, 2) weight tensor, got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2], shape[3]))
}

#[inline]
fn w_idx(n_ues: usize, m_rx: usize, k_sub: usize, b: usize, n: usize, m: usize, k: usize) -> usize {
    ((((b * n_ues + n) * m_rx + m) * k_sub) + k) * 2
}

/// Scale each receive-antenna column to unit power inside the graph: for
/// every (batch item, antenna m, subcarrier k), `sum_n |W[n,m]|^2 = 1`
/// afterwards, so `tr(W^H W) = M` per subcarrier. Gradients flow through the
/// column-norm division.
pub fn normalize_rx_power(w: &Tensor) -> Result<Tensor> {
    let (batch, n_ues, m_rx, k_sub) = weight_shape(w)?;
    let wv = w.data();
    let mut out = wv.clone();
    let mut scales = vec![0.0; batch * m_rx * k_sub];

    for b in 0..batch {
        for m in 0..m_rx {
            for k in 0..k_sub {
                let mut power = 0.0;
                for n in 0..n_ues {
                    let i = w_idx(n_ues, m_rx, k_sub, b, n, m, k);
                    power += wv[i] * wv[i] + wv[i + 1] * wv[i + 1];
                }
                if power == 0.0 {
                    return Err(Error::DegenerateWeights(format!(
                        "zero column for antenna {m} at batch {b}, subcarrier {k}"
                    )));
                }
                let norm = power.sqrt();
                scales[(b * m_rx + m) * k_sub + k] = norm;
                let inv = 1.0 / norm;
                for n in 0..n_ues {
                    let i = w_idx(n_ues, m_rx, k_sub, b, n, m, k);
                    out[i] *= inv;
                    out[i + 1] *= inv;
                }
            }
        }
    }

    let normalized = out.clone();
    let parent = w.clone();
    Ok(Tensor::from_op(
        w.shape(),
        out,
        vec![w.clone()],
        move |dy, store| {
            // Per column v with s = ||v|| and y = v/s:
            // dv = (dy - y * (y . dy)) / s.
            let slot = store.slot(&parent);
            for b in 0..batch {
                for m in 0..m_rx {
                    for k in 0..k_sub {
                        let s = scales[(b * m_rx + m) * k_sub + k];
                        let mut y_dot_dy = 0.0;
                        for n in 0..n_ues {
                            let i = w_idx(n_ues, m_rx, k_sub, b, n, m, k);
                            y_dot_dy += normalized[i] * dy[i] + normalized[i + 1] * dy[i + 1];
                        }
                        for n in 0..n_ues {
                            let i = w_idx(n_ues, m_rx, k_sub, b, n, m, k);
                            slot[i] += (dy[i] - normalized[i] * y_dot_dy) / s;
                            slot[i + 1] += (dy[i + 1] - normalized[i + 1] * y_dot_dy) / s;
                        }
                    }
                }
            }
        },
    ))
}

/// Per-slice SINR ingredients shared by the loss forward and backward.
struct SliceStats {
    /// Row-by-row responses u[n][i] = sum_m W[n,m] H[m,i], row-major N x N.
    u_re: Vec<f64>,
    u_im: Vec<f64>,
    /// Interference-plus-noise denominators.
    denom: Vec<f64>,
    gamma: Vec<f64>,
}

fn slice_stats(
    wv: &[f64],
    h: &ChannelBatch,
    b: usize,
    k: usize,
    sigma2: f64,
) -> Result<SliceStats> {
    let dims = h.dims;
    let (n_ues, m_rx, k_sub) = (dims.n_ues, dims.m_rx, dims.k_subcarriers);
    let mut u_re = vec![0.0; n_ues * n_ues];
    let mut u_im = vec![0.0; n_ues * n_ues];
    let mut row_energy = vec![0.0; n_ues];

    for n in 0..n_ues {
        for m in 0..m_rx {
            let wi = w_idx(n_ues, m_rx, k_sub, b, n, m, k);
            let (a, c) = (wv[wi], wv[wi + 1]);
            row_energy[n] += a * a + c * c;
            for i in 0..n_ues {
                let hv = h.at(b, i, m, k);
                u_re[n * n_ues + i] += a * hv.re - c * hv.im;
                u_im[n * n_ues + i] += a * hv.im + c * hv.re;
            }
        }
    }

    let mut denom = vec![0.0; n_ues];
    let mut gamma = vec![0.0; n_ues];
    for n in 0..n_ues {
        let mut interference = 0.0;
        for i in 0..n_ues {
            if i != n {
                let idx = n * n_ues + i;
                interference += u_re[idx] * u_re[idx] + u_im[idx] * u_im[idx];
            }
        }
        let d = interference + sigma2 * row_energy[n];
        if d == 0.0 {
            return Err(Error::UndefinedSinr(format!(
                "zero denominator for UE {n} at batch {b}, subcarrier {k}"
            )));
        }
        let s_idx = n * n_ues + n;
        let signal = u_re[s_idx] * u_re[s_idx] + u_im[s_idx] * u_im[s_idx];
        denom[n] = d;
        gamma[n] = signal / d;
    }

    Ok(SliceStats {
        u_re,
        u_im,
        denom,
        gamma,
    })
}

/// Unsupervised training objective: the negative of the weighted sum-rate
/// averaged over batch items and subcarriers,
/// `L = -mean_{b,k} sum_n alpha_n log2(1 + gamma_n(b, k))`,
/// with the SINR built from the complex weight/channel arithmetic expressed
/// over the (re, im) pairs of `w`. `sigma2` holds one noise variance per
/// batch item.
pub fn nnbf_loss(
    w: &Tensor,
    h: &ChannelBatch,
    sigma2: &[f64],
    alpha: &RateWeights,
) -> Result<Tensor> {
    let (batch, n_ues, m_rx, k_sub) = weight_shape(w)?;
    let dims = h.dims;
    if (dims.batch, dims.n_ues, dims.m_rx, dims.k_subcarriers) != (batch, n_ues, m_rx, k_sub) {
        return Err(Error::Shape(format!(
            "weight tensor ({batch},{n_ues},{m_rx},{k_sub}) does not match channel dims {dims:?}"
        )));
    }
    if sigma2.len() != batch {
        return Err(Error::Shape(format!(
            "need {batch} noise variances, got {}",
            sigma2.len()
        )));
    }
    if alpha.values().len() != n_ues {
        return Err(Error::Shape(format!(
            "need {n_ues} rate weights, got {}",
            alpha.values().len()
        )));
    }

    let wv = w.data();
    let alpha_v = alpha.values().to_vec();
    let mut total_rate = 0.0;
    for b in 0..batch {
        for k in 0..k_sub {
            let stats = slice_stats(&wv, h, b, k, sigma2[b])?;
            for n in 0..n_ues {
                total_rate += alpha_v[n] * (1.0 + stats.gamma[n]).log2();
            }
        }
    }
    let slices = (batch * k_sub) as f64;
    let loss = -total_rate / slices;

    let parent = w.clone();
    let h_saved = h.clone();
    let sigma_saved = sigma2.to_vec();
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        vec![w.clone()],
        move |out_grad, store| {
            let go = out_grad[0];
            let ln2 = std::f64::consts::LN_2;
            let slot = store.slot(&parent);
            for b in 0..batch {
                let s2 = sigma_saved[b];
                for k in 0..k_sub {
                    let stats = slice_stats(&wv, &h_saved, b, k, s2)
                        .expect("forward pass validated this slice");
                    for n in 0..n_ues {
                        // d loss / d gamma_n, including the leading minus and
                        // the mean normalization.
                        let c = go * alpha_v[n] / (slices * (1.0 + stats.gamma[n]) * ln2);
                        let g_signal = -c / stats.denom[n];
                        let g_interf = c * stats.gamma[n] / stats.denom[n];
                        let g_energy = c * stats.gamma[n] * s2 / stats.denom[n];
                        for m in 0..m_rx {
                            let wi = w_idx(n_ues, m_rx, k_sub, b, n, m, k);
                            let (a, cpart) = (wv[wi], wv[wi + 1]);
                            let mut d_re = 2.0 * a * g_energy;
                            let mut d_im = 2.0 * cpart * g_energy;
                            for i in 0..n_ues {
                                let coef = if i == n { g_signal } else { g_interf };
                                let idx = n * n_ues + i;
                                let du_re = 2.0 * coef * stats.u_re[idx];
                                let du_im = 2.0 * coef * stats.u_im[idx];
                                let hv = h_saved.at(b, i, m, k);
                                d_re += du_re * hv.re + du_im * hv.im;
                                d_im += -du_re * hv.im + du_im * hv.re;
                            }
                            slot[wi] += d_re;
                            slot[wi + 1] += d_im;
                        }
                    }
                }
            }
        },
    ))
}

/// Lift a fixed beamformer set into a constant (B, N, M, K, 2) tensor.
pub fn beamformer_to_tensor(w: &BeamformerSet) -> Tensor {
    let dims = w.dims;
    let mut data = Vec::with_capacity(dims.tensor_len() * 2);
    for b in 0..dims.batch {
        for n in 0..dims.n_ues {
            for m in 0..dims.m_rx {
                for k in 0..dims.k_subcarriers {
                    let z = w.at(b, n, m, k);
                    data.push(z.re);
                    data.push(z.im);
                }
            }
        }
    }
    Tensor::constant(
        &[dims.batch, dims.n_ues, dims.m_rx, dims.k_subcarriers, 2],
        data,
    )
}

/// Materialize a (B, N, M, K, 2) tensor as a beamformer set.
pub fn tensor_to_beamformer(t: &Tensor, dims: crate::channel::SystemDims) -> Result<BeamformerSet> {
    let (batch, n_ues, m_rx, k_sub) = weight_shape(t)?;
    if (dims.batch, dims.n_ues, dims.m_rx, dims.k_subcarriers) != (batch, n_ues, m_rx, k_sub) {
        return Err(Error::Shape(format!(
            "tensor ({batch},{n_ues},{m_rx},{k_sub}) does not match dims {dims:?}"
        )));
    }
    let data = t.data_ref();
    let complex: Vec<Complex> = data
        .chunks_exact(2)
        .map(|pair| Complex::new(pair[0], pair[1]))
        .collect();
    BeamformerSet::from_data(dims, complex)
}

/// Channel batch as the network's (B*N*M, 2, K) IQ input tensor.
pub fn channel_input_tensor(h: &ChannelBatch) -> Tensor {
    let dims = h.dims;
    let (batch, n_ues, m_rx, k_sub) = (dims.batch, dims.n_ues, dims.m_rx, dims.k_subcarriers);
    let mut data = Vec::with_capacity(batch * n_ues * m_rx * 2 * k_sub);
    for b in 0..batch {
        for n in 0..n_ues {
            for m in 0..m_rx {
                for k in 0..k_sub {
                    data.push(h.at(b, n, m, k).re);
                }
                for k in 0..k_sub {
                    data.push(h.at(b, n, m, k).im);
                }
            }
        }
    }
    Tensor::constant(&[batch * n_ues * m_rx, 2, k_sub], data)
}
