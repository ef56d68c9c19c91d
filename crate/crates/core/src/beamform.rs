//! Baseline receive beamformers (ZFBF, MMSE) and the analytic performance
//! metrics shared by all methods: per-UE SINR, weighted sum-rate, and the
//! per-receive-antenna power normalization.
//!
//! Conventions: the channel H is M x N (column n = UE n), beamforming
//! weights W are N x M, and row k of W is applied to the received vector by
//! a plain (unconjugated) product, so `[W H]_{ki}` is the response of UE i's
//! stream on UE k's output.

use crate::channel::SystemDims;
use crate::linalg::{Complex, ComplexMatrix};
use crate::{Error, Result};

/// Per-subcarrier beamforming weights for a batch, shape (B, N, M, K).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub dims: SystemDims,
    data: Vec<Complex>,
}

impl BeamformerSet {
    pub fn zeros(dims: SystemDims) -> Self {
        Self {
            data: vec![Complex::new(0.0, 0.0); dims.tensor_len()],
            dims,
        }
    }

    pub fn from_data(dims: SystemDims, data: Vec<Complex>) -> Result<Self> {
        if data.len() != dims.tensor_len() {
            return Err(Error::Shape(format!(
                "beamformer tensor needs {} entries, got {}",
                dims.tensor_len(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn data(&self) -> &[Complex] {
        &self.data
    }

    #[inline]
    pub fn at(&self, b: usize, n: usize, m: usize, k: usize) -> Complex {
        self.data[self.dims.index(b, n, m, k)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, n: usize, m: usize, k: usize, value: Complex) {
        let idx = self.dims.index(b, n, m, k);
        self.data[idx] = value;
    }

    /// Per-subcarrier weight matrix W (N x M).
    pub fn weight_matrix(&self, b: usize, k: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.dims.n_ues, self.dims.m_rx, |n, m| self.at(b, n, m, k))
    }

    /// Store an N x M weight matrix at (batch item, subcarrier).
    pub fn set_weight_matrix(&mut self, b: usize, k: usize, w: &ComplexMatrix) -> Result<()> {
        if w.rows() != self.dims.n_ues || w.cols() != self.dims.m_rx {
            return Err(Error::Shape(format!(
                "expected {}x{} weights, got {}x{}",
                self.dims.n_ues,
                self.dims.m_rx,
                w.rows(),
                w.cols()
            )));
        }
        for n in 0..self.dims.n_ues {
            for m in 0..self.dims.m_rx {
                self.set(b, n, m, k, w[(n, m)]);
            }
        }
        Ok(())
    }
}

/// Per-UE linear SINR values for one (batch item, subcarrier) slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrVector(pub Vec<f64>);

impl SinrVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Nonnegative per-UE rate weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RateWeights(Vec<f64>);

impl RateWeights {
    /// The default weighting: 1/N for each of the N UEs.
    pub fn uniform(n_ues: usize) -> Self {
        Self(vec![1.0 / n_ues as f64; n_ues])
    }

    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty()
            || alpha
                .iter()
                .any(|&a| a.is_nan() || a < 0.0 || !a.is_finite())
        {
            return Err(Error::Config(
                "rate weights must be nonnegative and finite".into(),
            ));
        }
        Ok(Self(alpha))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Zero-forcing beamformer: the left pseudo-inverse `(H^H H)^-1 H^H`.
pub fn zfbf(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    h.left_pinv()
}

/// MMSE equalizer `(H^H H + sigma^2 I)^-1 H^H`.
pub fn mmse(h: &ComplexMatrix, sigma2: f64) -> Result<ComplexMatrix> {
    if sigma2 < 0.0 {
        return Err(Error::Config(format!("negative noise variance {sigma2}")));
    }
    let ah = h.hermitian();
    let mut gram = ah.matmul(h)?;
    for i in 0..gram.rows() {
        gram[(i, i)] += Complex::new(sigma2, 0.0);
    }
    gram.lu_inverse()?.matmul(&ah)
}

/// Per-UE SINR of weights W on channel H at noise variance sigma^2:
/// `gamma_k = |[WH]_kk|^2 / (sum_{i != k} |[WH]_ki|^2 + sigma^2 ||w_k||^2)`.
pub fn sinr_per_ue(w: &ComplexMatrix, h: &ComplexMatrix, sigma2: f64) -> Result<SinrVector> {
    if w.cols() != h.rows() || w.rows() != h.cols() {
        return Err(Error::Shape(format!(
            "weights {}x{} incompatible with channel {}x{}",
            w.rows(),
            w.cols(),
            h.rows(),
            h.cols()
        )));
    }
    let wh = w.matmul(h)?;
    let n = w.rows();
    let mut gammas = Vec::with_capacity(n);
    for k in 0..n {
        let signal = wh[(k, k)].norm_sqr();
        let interference: f64 = (0..n)
            .filter(|&i| i != k)
            .map(|i| wh[(k, i)].norm_sqr())
            .sum();
        let row_energy: f64 = (0..w.cols()).map(|m| w[(k, m)].norm_sqr()).sum();
        let denom = interference + sigma2 * row_energy;
        if denom == 0.0 {
            return Err(Error::UndefinedSinr(format!(
                "row {k} has zero interference-plus-noise denominator"
            )));
        }
        gammas.push(signal / denom);
    }
    Ok(SinrVector(gammas))
}

/// Weighted sum-rate `sum_i alpha_i log2(1 + gamma_i)` in bits/s/Hz.
pub fn sum_rate(gamma: &SinrVector, alpha: &RateWeights) -> Result<f64> {
    if gamma.len() != alpha.values().len() {
        return Err(Error::Shape(format!(
            "{} SINR values but {} rate weights",
            gamma.len(),
            alpha.values().len()
        )));
    }
    Ok(gamma
        .0
        .iter()
        .zip(alpha.values())
        .map(|(&g, &a)| a * (1.0 + g).log2())
        .sum())
}

/// Scale every weight column (receive antenna) to unit power: after the call
/// `sum_n |W[n, m]|^2 = 1` for each (batch item, subcarrier, antenna m), so
/// `tr(W^H W) = M` per subcarrier.
pub fn normalize_receive_power(w: &BeamformerSet) -> Result<BeamformerSet> {
    let dims = w.dims;
    let mut out = w.clone();
    for b in 0..dims.batch {
        for k in 0..dims.k_subcarriers {
            for m in 0..dims.m_rx {
                let power: f64 = (0..dims.n_ues).map(|n| w.at(b, n, m, k).norm_sqr()).sum();
                if power == 0.0 {
                    return Err(Error::DegenerateWeights(format!(
                        "zero column for antenna {m} at batch {b}, subcarrier {k}"
                    )));
                }
                let scale = 1.0 / power.sqrt();
                for n in 0..dims.n_ues {
                    out.set(b, n, m, k, w.at(b, n, m, k) * scale);
                }
            }
        }
    }
    Ok(out)
}

/// `tr(W^H W)` of one per-subcarrier weight slice.
pub fn trace_power(w: &BeamformerSet, b: usize, k: usize) -> f64 {
    let dims = w.dims;
    let mut total = 0.0;
    for n in 0..dims.n_ues {
        for m in 0..dims.m_rx {
            total += w.at(b, n, m, k).norm_sqr();
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_channel(m: usize, n: usize, seed: u64) -> ComplexMatrix {
        let mut rng = crate::rng::rng_for(seed, &[m as u64, n as u64]);
        ComplexMatrix::from_fn(m, n, |_, _| {
            Complex::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    #[test]
    fn zfbf_inverts_the_channel() {
        let id = ComplexMatrix::identity(4);
        assert!(zfbf(&id).unwrap().distance(&id) < 1e-12);

        let h = ComplexMatrix::identity(2).scaled(Complex::new(2.0, 0.0));
        let w = zfbf(&h).unwrap();
        assert!((w[(0, 0)].re - 0.5).abs() < 1e-14);
        assert!((w[(1, 1)].re - 0.5).abs() < 1e-14);

        let h = random_channel(8, 4, 1);
        let w = zfbf(&h).unwrap();
        let wh = w.matmul(&h).unwrap();
        assert!(wh.distance(&ComplexMatrix::identity(4)) < 1e-9);
        for k in 0..4 {
            for i in 0..4 {
                if i != k {
                    assert!(wh[(k, i)].norm() < 1e-9, "interference at ({k},{i})");
                }
            }
        }
    }

    #[test]
    fn mmse_known_cases() {
        // H = I2, sigma^2 = 1 -> (I + I)^-1 I = 0.5 I.
        let w = mmse(&ComplexMatrix::identity(2), 1.0).unwrap();
        assert!((w[(0, 0)].re - 0.5).abs() < 1e-14);
        assert!(w[(0, 1)].norm() < 1e-14);

        // sigma^2 = 0 reduces to ZFBF.
        let h = random_channel(8, 4, 2);
        let wz = zfbf(&h).unwrap();
        let wm = mmse(&h, 0.0).unwrap();
        assert!(wm.distance(&wz) < 1e-10);

        // Large sigma^2: first-order expansion gives W ~ H^H / sigma^2.
        let sigma2 = 1e6;
        let wm = mmse(&h, sigma2).unwrap();
        let approx = h.hermitian().scaled(Complex::new(1.0 / sigma2, 0.0));
        for n in 0..wm.rows() {
            for m in 0..wm.cols() {
                let rel = (wm[(n, m)] - approx[(n, m)]).norm() / approx[(n, m)].norm();
                assert!(rel < 1e-3, "entry ({n},{m}) relative error {rel}");
            }
        }
    }

    #[test]
    fn sinr_scalar_case() {
        let w = ComplexMatrix::identity(1);
        let h = ComplexMatrix::identity(1);
        let gamma = sinr_per_ue(&w, &h, 0.5).unwrap();
        assert!((gamma.0[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sinr_zero_row_zero_noise_is_undefined() {
        let w = ComplexMatrix::zeros(1, 1);
        let h = ComplexMatrix::identity(1);
        assert!(matches!(
            sinr_per_ue(&w, &h, 0.0),
            Err(Error::UndefinedSinr(_))
        ));
    }

    #[test]
    fn zero_forcing_sinr_reduces_to_inverse_noise() {
        let h = random_channel(8, 4, 3);
        let w = zfbf(&h).unwrap();
        let sigma2 = 0.25;
        let gamma = sinr_per_ue(&w, &h, sigma2).unwrap();
        for k in 0..4 {
            let row_energy: f64 = (0..8).map(|m| w[(k, m)].norm_sqr()).sum();
            let expected = 1.0 / (sigma2 * row_energy);
            let rel = (gamma.0[k] - expected).abs() / expected;
            assert!(rel < 1e-9, "UE {k} relative error {rel}");
        }
    }

    #[test]
    fn sum_rate_known_values() {
        let alpha = RateWeights::uniform(4);
        let gamma = SinrVector(vec![1.0; 4]);
        assert!((sum_rate(&gamma, &alpha).unwrap() - 1.0).abs() < 1e-15);

        let alpha = RateWeights::new(vec![1.0]).unwrap();
        let gamma = SinrVector(vec![3.0]);
        assert!((sum_rate(&gamma, &alpha).unwrap() - 2.0).abs() < 1e-15);

        let alpha = RateWeights::uniform(2);
        let gamma = SinrVector(vec![0.0, 0.0]);
        assert_eq!(sum_rate(&gamma, &alpha).unwrap(), 0.0);

        let mismatched = SinrVector(vec![1.0]);
        assert!(sum_rate(&mismatched, &alpha).is_err());
    }

    fn random_beamformer(dims: SystemDims, seed: u64) -> BeamformerSet {
        let mut rng = crate::rng::rng_for(seed, &[dims.tensor_len() as u64]);
        let data = (0..dims.tensor_len())
            .map(|_| Complex::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        BeamformerSet::from_data(dims, data).unwrap()
    }

    #[test]
    fn normalization_fixes_column_power() {
        let dims = SystemDims::new(4, 4, 1, 1).unwrap();
        let mut w = BeamformerSet::zeros(dims);
        let scaled = ComplexMatrix::identity(4).scaled(Complex::new(2.0, 0.0));
        w.set_weight_matrix(0, 0, &scaled).unwrap();
        let normalized = normalize_receive_power(&w).unwrap();
        assert!(
            normalized
                .weight_matrix(0, 0)
                .distance(&ComplexMatrix::identity(4))
                < 1e-12
        );
        assert!((trace_power(&normalized, 0, 0) - 4.0).abs() < 1e-12);

        // Idempotence.
        let twice = normalize_receive_power(&normalized).unwrap();
        for (a, b) in twice.data().iter().zip(normalized.data()) {
            assert!((a - b).norm() < 1e-12);
        }

        let dims = SystemDims::new(3, 5, 4, 2).unwrap();
        let w = random_beamformer(dims, 9);
        let normalized = normalize_receive_power(&w).unwrap();
        for b in 0..dims.batch {
            for k in 0..dims.k_subcarriers {
                let trace = trace_power(&normalized, b, k);
                assert!((trace - dims.m_rx as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalization_rejects_zero_column() {
        let dims = SystemDims::new(2, 2, 1, 1).unwrap();
        let mut w = random_beamformer(dims, 10);
        w.set(0, 0, 1, 0, Complex::new(0.0, 0.0));
        w.set(0, 1, 1, 0, Complex::new(0.0, 0.0));
        assert!(matches!(
            normalize_receive_power(&w),
            Err(Error::DegenerateWeights(_))
        ));
    }

    #[test]
    fn mmse_sinr_dominates_zfbf() {
        let mut case = 0u64;
        for m in [4usize, 8, 16] {
            for rep in 0..34 {
                case += 1;
                let h = random_channel(m, 4, 2000 + case + rep);
                let wz = match zfbf(&h) {
                    Ok(w) => w,
                    Err(_) => continue,
                };
                for sigma2 in [10.0, 1.0, 0.1, 0.01] {
                    let wm = mmse(&h, sigma2).unwrap();
                    let gz = sinr_per_ue(&wz, &h, sigma2).unwrap();
                    let gm = sinr_per_ue(&wm, &h, sigma2).unwrap();
                    for k in 0..4 {
                        assert!(
                            gm.0[k] >= gz.0[k] - 1e-9,
                            "m={m} sigma2={sigma2} UE {k}: mmse {} < zfbf {}",
                            gm.0[k],
                            gz.0[k]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn high_snr_baselines_converge() {
        let alpha = RateWeights::uniform(4);
        let sigma2 = 1e-6;
        for rep in 0..100 {
            let h = random_channel(8, 4, 3000 + rep);
            let rz = sum_rate(
                &sinr_per_ue(&zfbf(&h).unwrap(), &h, sigma2).unwrap(),
                &alpha,
            )
            .unwrap();
            let rm = sum_rate(
                &sinr_per_ue(&mmse(&h, sigma2).unwrap(), &h, sigma2).unwrap(),
                &alpha,
            )
            .unwrap();
            let gap = (rm - rz).abs() / rz;
            assert!(gap < 1e-3, "rep {rep}: relative gap {gap}");
        }
    }

    proptest! {
        #[test]
        fn sinr_is_invariant_to_row_scaling(
            seed in 0u64..500,
            scale_re in -3.0f64..3.0,
            scale_im in -3.0f64..3.0,
            row in 0usize..4,
        ) {
            prop_assume!(scale_re.abs() + scale_im.abs() > 1e-3);
            let h = random_channel(6, 4, 4000 + seed);
            let w = zfbf(&h).unwrap();
            let mut scaled = w.clone();
            let c = Complex::new(scale_re, scale_im);
            for m in 0..scaled.cols() {
                scaled[(row, m)] *= c;
            }
            let g0 = sinr_per_ue(&w, &h, 0.3).unwrap();
            let g1 = sinr_per_ue(&scaled, &h, 0.3).unwrap();
            let rel = (g0.0[row] - g1.0[row]).abs() / g0.0[row];
            prop_assert!(rel < 1e-10, "relative change {rel}");
        }
    }
}
