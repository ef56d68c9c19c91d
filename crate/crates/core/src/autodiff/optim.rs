//! AdamW optimizer with decoupled weight decay.

use super::Tensor;
use crate::{Error, Result};

/// AdamW state: per-parameter first/second moment estimates plus the shared
/// step counter and hyperparameters.
pub struct AdamW {
    params: Vec<Tensor>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    /// Canonical defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(params: Vec<Tensor>, lr: f64, weight_decay: f64) -> Self {
        let first = params.iter().map(|p| vec![0.0; p.len()]).collect();
        let second = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            params,
            first_moment: first,
            second_moment: second,
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first_moment, &self.second_moment)
    }

    /// One update: decoupled weight decay `w -= lr * wd * w`, then the
    /// bias-corrected Adam step `w -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self) -> Result<()> {
        for (i, p) in self.params.iter().enumerate() {
            if p.grad().is_none() {
                return Err(Error::Contract(format!(
                    "parameter {i} has no gradient; run backward first"
                )));
            }
        }
        self.step_count += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step_count as i32);

        for (i, p) in self.params.iter().enumerate() {
            let grad = p.grad().expect("checked above");
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let (lr, b1, b2, eps, wd) =
                (self.lr, self.beta1, self.beta2, self.eps, self.weight_decay);
            p.update_data(|w| {
                for j in 0..w.len() {
                    w[j] -= lr * wd * w[j];
                    m[j] = b1 * m[j] + (1.0 - b1) * grad[j];
                    v[j] = b2 * v[j] + (1.0 - b2) * grad[j] * grad[j];
                    let m_hat = m[j] / bias1;
                    let v_hat = v[j] / bias2;
                    w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}
