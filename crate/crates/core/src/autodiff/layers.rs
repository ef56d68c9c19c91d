//! Neural network layers: 1D convolution, batch normalization, and fully
//! connected, each differentiable w.r.t. its inputs and parameters.

use super::Tensor;
use crate::{Error, Result};
use rand::Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether a forward pass uses batch statistics (and updates the running
/// ones) or the recorded running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Uniform init in [-bound, bound] with `bound = 1/sqrt(fan_in)`.
fn fan_in_uniform(rng: &mut impl Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Dot product with four accumulators; the fixed summation order keeps runs
/// bit-reproducible while letting the CPU pipeline the adds.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for i in chunks * 4..n {
        s0 += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3)
}

// ---------------------------------------------------------------------------
// Fully connected layer
// ---------------------------------------------------------------------------

/// Fully connected layer computing `y = x W^T + b`.
#[derive(Debug)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    in_features: usize,
    out_features: usize,
}

impl LinearLayer {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let weight = Tensor::param(
            &[out_features, in_features],
            fan_in_uniform(rng, out_features * in_features, in_features),
        );
        let bias = Tensor::param(&[out_features], vec![0.0; out_features]);
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    /// Forward over a (batch, in_features) input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_features {
            return Err(Error::Shape(format!(
                "linear layer expects (batch, {}), got {shape:?}",
                self.in_features
            )));
        }
        let batch = shape[0];
        let (n_in, n_out) = (self.in_features, self.out_features);

        let mut out = vec![0.0; batch * n_out];
        {
            let x_ref = x.data_ref();
            let w_ref = self.weight.data_ref();
            let b_ref = self.bias.data_ref();
            let (xv, wv, bv): (&[f64], &[f64], &[f64]) = (&x_ref, &w_ref, &b_ref);

            let row = |y_row: &mut [f64], x_row: &[f64]| {
                for (o, slot) in y_row.iter_mut().enumerate() {
                    *slot = bv[o] + dot(x_row, &wv[o * n_in..(o + 1) * n_in]);
                }
            };
            #[cfg(feature = "parallel")]
            out.par_chunks_mut(n_out)
                .zip(xv.par_chunks(n_in))
                .for_each(|(y_row, x_row)| row(y_row, x_row));
            #[cfg(not(feature = "parallel"))]
            out.chunks_mut(n_out)
                .zip(xv.chunks(n_in))
                .for_each(|(y_row, x_row)| row(y_row, x_row));
        }

        let (x_p, w_p, b_p) = (x.clone(), self.weight.clone(), self.bias.clone());
        Ok(Tensor::from_op(
            vec![batch, n_out],
            out,
            vec![x.clone(), self.weight.clone(), self.bias.clone()],
            move |dy, store| {
                let x_ref = x_p.data_ref();
                let w_ref = w_p.data_ref();
                let (xv, wv): (&[f64], &[f64]) = (&x_ref, &w_ref);

                if x_p.requires_grad() {
                    let dx = store.slot(&x_p);
                    let row = |dx_row: &mut [f64], dy_row: &[f64]| {
                        for (o, &g) in dy_row.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            let w_row = &wv[o * n_in..(o + 1) * n_in];
                            for (d, w) in dx_row.iter_mut().zip(w_row) {
                                *d += g * w;
                            }
                        }
                    };
                    #[cfg(feature = "parallel")]
                    dx.par_chunks_mut(n_in)
                        .zip(dy.par_chunks(n_out))
                        .for_each(|(dx_row, dy_row)| row(dx_row, dy_row));
                    #[cfg(not(feature = "parallel"))]
                    dx.chunks_mut(n_in)
                        .zip(dy.chunks(n_out))
                        .for_each(|(dx_row, dy_row)| row(dx_row, dy_row));
                }

                if w_p.requires_grad() {
                    let dw = store.slot(&w_p);
                    let row = |o: usize, dw_row: &mut [f64]| {
                        for b in 0..batch {
                            let g = dy[b * n_out + o];
                            if g == 0.0 {
                                continue;
                            }
                            let x_row = &xv[b * n_in..(b + 1) * n_in];
                            for (d, x) in dw_row.iter_mut().zip(x_row) {
                                *d += g * x;
                            }
                        }
                    };
                    #[cfg(feature = "parallel")]
                    dw.par_chunks_mut(n_in)
                        .enumerate()
                        .for_each(|(o, dw_row)| row(o, dw_row));
                    #[cfg(not(feature = "parallel"))]
                    dw.chunks_mut(n_in)
                        .enumerate()
                        .for_each(|(o, dw_row)| row(o, dw_row));
                }

                if b_p.requires_grad() {
                    let db = store.slot(&b_p);
                    for b in 0..batch {
                        for (o, slot) in db.iter_mut().enumerate() {
                            *slot += dy[b * n_out + o];
                        }
                    }
                }
            },
        ))
    }
}

// ---------------------------------------------------------------------------
// 1D convolution
// ---------------------------------------------------------------------------

/// 1D cross-correlation with zero padding over (batch, channels, length)
/// inputs.
#[derive(Debug)]
pub struct Conv1dLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {kernel_size}"
            )));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::Config(format!(
                "stride must be 1 or 2, got {stride}"
            )));
        }
        let weight = Tensor::param(
            &[out_channels, in_channels, kernel_size],
            fan_in_uniform(
                rng,
                out_channels * in_channels * kernel_size,
                in_channels * kernel_size,
            ),
        );
        let bias = Tensor::param(&[out_channels], vec![0.0; out_channels]);
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
        })
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    pub fn output_length(&self, input_length: usize) -> Result<usize> {
        let padded = input_length + 2 * self.padding;
        if padded < self.kernel_size {
            return Err(Error::Shape(format!(
                "input length {input_length} too short for kernel {}",
                self.kernel_size
            )));
        }
        Ok((padded - self.kernel_size) / self.stride + 1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "conv1d expects (batch, {}, length), got {shape:?}",
                self.in_channels
            )));
        }
        let (batch, len) = (shape[0], shape[2]);
        let out_len = self.output_length(len)?;
        let (c_in, c_out, ksize, stride, pad) = (
            self.in_channels,
            self.out_channels,
            self.kernel_size,
            self.stride,
            self.padding,
        );

        let mut out = vec![0.0; batch * c_out * out_len];
        {
            let x_ref = x.data_ref();
            let w_ref = self.weight.data_ref();
            let b_ref = self.bias.data_ref();
            let (xv, wv, bv): (&[f64], &[f64], &[f64]) = (&x_ref, &w_ref, &b_ref);

            let item = |n: usize, y_item: &mut [f64]| {
                let x_item = &xv[n * c_in * len..(n + 1) * c_in * len];
                for o in 0..c_out {
                    for t in 0..out_len {
                        let mut acc = bv[o];
                        for c in 0..c_in {
                            let w_row = &wv[(o * c_in + c) * ksize..(o * c_in + c + 1) * ksize];
                            let x_row = &x_item[c * len..(c + 1) * len];
                            for (q, &w) in w_row.iter().enumerate() {
                                let j = t * stride + q;
                                if j >= pad && j - pad < len {
                                    acc += x_row[j - pad] * w;
                                }
                            }
                        }
                        y_item[o * out_len + t] = acc;
                    }
                }
            };
            #[cfg(feature = "parallel")]
            out.par_chunks_mut(c_out * out_len)
                .enumerate()
                .for_each(|(n, y_item)| item(n, y_item));
            #[cfg(not(feature = "parallel"))]
            out.chunks_mut(c_out * out_len)
                .enumerate()
                .for_each(|(n, y_item)| item(n, y_item));
        }

        let (x_p, w_p, b_p) = (x.clone(), self.weight.clone(), self.bias.clone());
        Ok(Tensor::from_op(
            vec![batch, c_out, out_len],
            out,
            vec![x.clone(), self.weight.clone(), self.bias.clone()],
            move |dy, store| {
                let x_ref = x_p.data_ref();
                let w_ref = w_p.data_ref();
                let (xv, wv): (&[f64], &[f64]) = (&x_ref, &w_ref);

                if x_p.requires_grad() {
                    let dx = store.slot(&x_p);
                    let item = |n: usize, dx_item: &mut [f64]| {
                        let dy_item = &dy[n * c_out * out_len..(n + 1) * c_out * out_len];
                        for o in 0..c_out {
                            for t in 0..out_len {
                                let g = dy_item[o * out_len + t];
                                if g == 0.0 {
                                    continue;
                                }
                                for c in 0..c_in {
                                    let w_row =
                                        &wv[(o * c_in + c) * ksize..(o * c_in + c + 1) * ksize];
                                    for (q, &w) in w_row.iter().enumerate() {
                                        let j = t * stride + q;
                                        if j >= pad && j - pad < len {
                                            dx_item[c * len + j - pad] += g * w;
                                        }
                                    }
                                }
                            }
                        }
                    };
                    #[cfg(feature = "parallel")]
                    dx.par_chunks_mut(c_in * len)
                        .enumerate()
                        .for_each(|(n, dx_item)| item(n, dx_item));
                    #[cfg(not(feature = "parallel"))]
                    dx.chunks_mut(c_in * len)
                        .enumerate()
                        .for_each(|(n, dx_item)| item(n, dx_item));
                }

                if w_p.requires_grad() {
                    let dw = store.slot(&w_p);
                    let filt = |o: usize, dw_filt: &mut [f64]| {
                        for n in 0..batch {
                            let x_item = &xv[n * c_in * len..(n + 1) * c_in * len];
                            let dy_row =
                                &dy[(n * c_out + o) * out_len..(n * c_out + o + 1) * out_len];
                            for (t, &g) in dy_row.iter().enumerate() {
                                if g == 0.0 {
                                    continue;
                                }
                                for c in 0..c_in {
                                    for q in 0..ksize {
                                        let j = t * stride + q;
                                        if j >= pad && j - pad < len {
                                            dw_filt[c * ksize + q] += g * x_item[c * len + j - pad];
                                        }
                                    }
                                }
                            }
                        }
                    };
                    #[cfg(feature = "parallel")]
                    dw.par_chunks_mut(c_in * ksize)
                        .enumerate()
                        .for_each(|(o, dw_filt)| filt(o, dw_filt));
                    #[cfg(not(feature = "parallel"))]
                    dw.chunks_mut(c_in * ksize)
                        .enumerate()
                        .for_each(|(o, dw_filt)| filt(o, dw_filt));
                }

                if b_p.requires_grad() {
                    let db = store.slot(&b_p);
                    for n in 0..batch {
                        for (o, slot) in db.iter_mut().enumerate() {
                            let dy_row =
                                &dy[(n * c_out + o) * out_len..(n * c_out + o + 1) * out_len];
                            *slot += dy_row.iter().sum::<f64>();
                        }
                    }
                }
            },
        ))
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel batch normalization over (batch, channels, length) inputs.
///
/// Train mode normalizes with the biased batch statistics pooled over
/// (batch, length) and folds them into the running statistics with
/// `running = (1 - momentum) * running + momentum * batch`; eval mode uses
/// the running statistics. The running variance stores the biased batch
/// variance, so a momentum-1 train pass followed by an eval pass on the same
/// batch reproduces the train output.
#[derive(Debug)]
pub struct BatchNorm1dLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    channels: usize,
}

impl BatchNorm1dLayer {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::param(&[channels], vec![1.0; channels]),
            beta: Tensor::param(&[channels], vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        vec![self.gamma.clone(), self.beta.clone()]
    }

    fn check_shape(&self, x: &Tensor) -> Result<(usize, usize)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm expects (batch, {}, length), got {shape:?}",
                self.channels
            )));
        }
        Ok((shape[0], shape[2]))
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.forward_eval(x),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (batch, len) = self.check_shape(x)?;
        let pooled = batch * len;
        if pooled < 2 {
            return Err(Error::Shape(
                "train-mode batchnorm needs at least 2 pooled samples per channel".into(),
            ));
        }
        let channels = self.channels;
        let eps = self.eps;

        let xv = x.data();
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for n in 0..batch {
            for c in 0..channels {
                let row = &xv[(n * channels + c) * len..(n * channels + c + 1) * len];
                mean[c] += row.iter().sum::<f64>();
            }
        }
        for m in mean.iter_mut() {
            *m /= pooled as f64;
        }
        for n in 0..batch {
            for c in 0..channels {
                let row = &xv[(n * channels + c) * len..(n * channels + c + 1) * len];
                var[c] += row.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        for v in var.iter_mut() {
            *v /= pooled as f64;
        }

        for c in 0..channels {
            self.running_mean[c] =
                (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean[c];
            self.running_var[c] =
                (1.0 - self.momentum) * self.running_var[c] + self.momentum * var[c];
        }

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let gamma_v = self.gamma.data();
        let beta_v = self.beta.data();

        let mut normalized = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for n in 0..batch {
            for c in 0..channels {
                let base = (n * channels + c) * len;
                for t in 0..len {
                    let xh = (xv[base + t] - mean[c]) * inv_std[c];
                    normalized[base + t] = xh;
                    out[base + t] = gamma_v[c] * xh + beta_v[c];
                }
            }
        }

        let (x_p, g_p, b_p) = (x.clone(), self.gamma.clone(), self.beta.clone());
        let shape = x.shape();
        Ok(Tensor::from_op(
            shape,
            out,
            vec![x.clone(), self.gamma.clone(), self.beta.clone()],
            move |dy, store| {
                // Standard batchnorm backward through the batch statistics:
                // dx = inv_std * gamma * (dy - mean(dy) - xh * mean(dy * xh)).
                let mut sum_dy = vec![0.0; channels];
                let mut sum_dy_xh = vec![0.0; channels];
                for n in 0..batch {
                    for c in 0..channels {
                        let base = (n * channels + c) * len;
                        for t in 0..len {
                            sum_dy[c] += dy[base + t];
                            sum_dy_xh[c] += dy[base + t] * normalized[base + t];
                        }
                    }
                }

                if x_p.requires_grad() {
                    let dx = store.slot(&x_p);
                    let inv_pooled = 1.0 / pooled as f64;
                    for n in 0..batch {
                        for c in 0..channels {
                            let base = (n * channels + c) * len;
                            let factor = gamma_v[c] * inv_std[c];
                            for t in 0..len {
                                dx[base + t] += factor
                                    * (dy[base + t]
                                        - sum_dy[c] * inv_pooled
                                        - normalized[base + t] * sum_dy_xh[c] * inv_pooled);
                            }
                        }
                    }
                }
                if g_p.requires_grad() {
                    let dg = store.slot(&g_p);
                    for c in 0..channels {
                        dg[c] += sum_dy_xh[c];
                    }
                }
                if b_p.requires_grad() {
                    let db = store.slot(&b_p);
                    for c in 0..channels {
                        db[c] += sum_dy[c];
                    }
                }
            },
        ))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (batch, len) = self.check_shape(x)?;
        let channels = self.channels;
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|&v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let mean = self.running_mean.clone();
        let gamma_v = self.gamma.data();
        let beta_v = self.beta.data();

        let xv = x.data();
        let mut normalized = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for n in 0..batch {
            for c in 0..channels {
                let base = (n * channels + c) * len;
                for t in 0..len {
                    let xh = (xv[base + t] - mean[c]) * inv_std[c];
                    normalized[base + t] = xh;
                    out[base + t] = gamma_v[c] * xh + beta_v[c];
                }
            }
        }

        let (x_p, g_p, b_p) = (x.clone(), self.gamma.clone(), self.beta.clone());
        let shape = x.shape();
        Ok(Tensor::from_op(
            shape,
            out,
            vec![x.clone(), self.gamma.clone(), self.beta.clone()],
            move |dy, store| {
                if x_p.requires_grad() {
                    let dx = store.slot(&x_p);
                    for n in 0..batch {
                        for c in 0..channels {
                            let base = (n * channels + c) * len;
                            let factor = gamma_v[c] * inv_std[c];
                            for t in 0..len {
                                dx[base + t] += dy[base + t] * factor;
                            }
                        }
                    }
                }
                if g_p.requires_grad() {
                    let dg = store.slot(&g_p);
                    for n in 0..batch {
                        for c in 0..channels {
                            let base = (n * channels + c) * len;
                            for t in 0..len {
                                dg[c] += dy[base + t] * normalized[base + t];
                            }
                        }
                    }
                }
                if b_p.requires_grad() {
                    let db = store.slot(&b_p);
                    for n in 0..batch {
                        for c in 0..channels {
                            let base = (n * channels + c) * len;
                            for t in 0..len {
                                db[c] += dy[base + t];
                            }
                        }
                    }
                }
            },
        ))
    }
}
