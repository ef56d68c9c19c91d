//! Central finite-difference verification of analytic gradients.

use super::{backward, no_grad, Tensor};
use crate::Result;

/// Worst relative error of one parameter group.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub elements: usize,
}

/// Outcome of a finite-difference check over several parameter groups.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_rel_err)
            .fold(0.0, f64::max)
    }

    /// Strict comparison: a tolerance of zero can never pass.
    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "gradient check: step={:.1e} tolerance={:.1e} -> {}",
            self.step,
            self.tolerance,
            if self.passed() { "pass" } else { "FAIL" }
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "  {:<24} max rel err {:.3e} (element {} of {})",
                g.name, g.max_rel_err, g.worst_index, g.elements
            )?;
        }
        Ok(())
    }
}

/// Compare analytic gradients of `loss_fn` against central differences for
/// every element of every listed parameter.
///
/// `loss_fn` must be a deterministic function of the parameter values (for
/// networks: eval-mode forward). The error measure is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`: relative for
/// gradients of at least unit size, absolute below that, where central
/// differences run out of resolution anyway.
pub fn finite_difference_check<F>(
    params: &[(String, Tensor)],
    step: f64,
    tolerance: f64,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor>,
{
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = loss_fn()?;
    backward(&loss)?;

    let mut groups = Vec::with_capacity(params.len());
    for (name, p) in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.len()]);
        let mut worst = 0.0f64;
        let mut worst_index = 0;
        for i in 0..p.len() {
            p.nudge(i, step);
            let up = no_grad(&mut loss_fn)?.value();
            p.nudge(i, -2.0 * step);
            let down = no_grad(&mut loss_fn)?.value();
            p.nudge(i, step);
            let numeric = (up - down) / (2.0 * step);
            let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
            let rel = (analytic[i] - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
                worst_index = i;
            }
        }
        groups.push(GroupReport {
            name: name.clone(),
            max_rel_err: worst,
            worst_index,
            elements: p.len(),
        });
    }

    Ok(GradCheckReport {
        tolerance,
        step,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::layers::LinearLayer;
    use crate::autodiff::ops;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_linear_model_passes_tightly() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let layer = LinearLayer::new(4, 2, &mut rng);
        let x = Tensor::constant(&[3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let params = vec![
            ("weight".to_string(), layer.weight.clone()),
            ("bias".to_string(), layer.bias.clone()),
        ];
        let report = finite_difference_check(&params, 1e-5, 1e-8, || {
            let y = layer.forward(&x)?;
            Ok(ops::mean(&ops::mul(&y, &y)?))
        })
        .unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.max_rel_err() < 1e-8);
    }

    #[test]
    fn zero_tolerance_always_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = LinearLayer::new(2, 1, &mut rng);
        let x = Tensor::constant(&[1, 2], vec![0.3, -0.8]);
        let params = vec![("weight".to_string(), layer.weight.clone())];
        let report = finite_difference_check(&params, 1e-5, 0.0, || {
            let y = layer.forward(&x)?;
            Ok(ops::sum(&ops::mul(&y, &y)?))
        })
        .unwrap();
        assert!(!report.passed());
    }
}
