//! Tapped-delay-line channel synthesis and dataset persistence.
//!
//! Channels are drawn from a tapped-delay-line profile: each tap gets an
//! independent circular-symmetric complex Gaussian gain with variance equal
//! to its normalized power, and the frequency response over the subcarrier
//! grid is the Fourier sum of the taps. One realization per (batch item,
//! UE, receive antenna) triple; fading is flat over a batch item so the
//! subcarrier axis carries all the variation.

use crate::linalg::{Complex, ComplexMatrix};
use crate::rng::{mix, rng_for, stream};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;
use std::io::Read;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Problem sizes: N single-antenna UEs, M receive antennas, K subcarriers,
/// B channel matrices per batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemDims {
    pub n_ues: usize,
    pub m_rx: usize,
    pub k_subcarriers: usize,
    pub batch: usize,
}

impl SystemDims {
    pub fn new(n_ues: usize, m_rx: usize, k_subcarriers: usize, batch: usize) -> Result<Self> {
        if n_ues == 0 || m_rx == 0 || k_subcarriers == 0 || batch == 0 {
            return Err(Error::Config(format!(
                "all dimensions must be >= 1, got N={n_ues}, M={m_rx}, K={k_subcarriers}, B={batch}"
            )));
        }
        Ok(Self {
            n_ues,
            m_rx,
            k_subcarriers,
            batch,
        })
    }

    /// Complex entries in one batch tensor (B*N*M*K).
    pub fn tensor_len(&self) -> usize {
        self.batch * self.n_ues * self.m_rx * self.k_subcarriers
    }

    /// Flat index into a (B, N, M, K) row-major tensor.
    #[inline]
    pub fn index(&self, b: usize, n: usize, m: usize, k: usize) -> usize {
        ((b * self.n_ues + n) * self.m_rx + m) * self.k_subcarriers + k
    }
}

/// One tap of a delay profile before realization.
#[derive(Debug, Clone, Copy)]
pub struct ProfileTap {
    /// Delay in units of the delay spread.
    pub normalized_delay: f64,
    /// Tap power in dB, relative scale; powers are normalized to sum to 1.
    pub power_db: f64,
}

/// Tapped-delay-line power/delay profile plus the grid parameters needed to
/// turn realizations into frequency responses.
#[derive(Debug, Clone)]
pub struct DelayProfile {
    taps: Vec<ProfileTap>,
    linear_powers: Vec<f64>,
    pub delay_spread_s: f64,
    pub subcarrier_spacing_hz: f64,
}

impl DelayProfile {
    /// Build a profile. Taps are sorted by delay and their linear powers
    /// normalized to unit sum, so generated channels have unit average power.
    pub fn new(
        mut taps: Vec<ProfileTap>,
        delay_spread_s: f64,
        subcarrier_spacing_hz: f64,
    ) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Config("delay profile needs at least one tap".into()));
        }
        if taps.iter().any(|t| t.normalized_delay < 0.0) {
            return Err(Error::Config("negative tap delay".into()));
        }
        if delay_spread_s < 0.0 || subcarrier_spacing_hz <= 0.0 {
            return Err(Error::Config(
                "invalid delay spread or subcarrier spacing".into(),
            ));
        }
        taps.sort_by(|a, b| a.normalized_delay.total_cmp(&b.normalized_delay));
        let linear: Vec<f64> = taps.iter().map(|t| 10f64.powf(t.power_db / 10.0)).collect();
        let total: f64 = linear.iter().sum();
        let linear_powers = linear.iter().map(|p| p / total).collect();
        Ok(Self {
            taps,
            linear_powers,
            delay_spread_s,
            subcarrier_spacing_hz,
        })
    }

    /// 23-tap TDL-A power/delay table, all taps Rayleigh.
    pub fn tdl_a(delay_spread_s: f64, subcarrier_spacing_hz: f64) -> Self {
        const TABLE: [(f64, f64); 23] = [
            (0.0000, -13.4),
            (0.3819, 0.0),
            (0.4025, -2.2),
            (0.5868, -4.0),
            (0.4610, -6.0),
            (0.5375, -8.2),
            (0.6708, -9.9),
            (0.5750, -10.5),
            (0.7618, -7.5),
            (1.5375, -15.9),
            (1.8978, -6.6),
            (2.2242, -16.7),
            (2.1718, -12.4),
            (2.4942, -15.2),
            (2.5119, -10.8),
            (3.0582, -11.3),
            (4.0810, -12.7),
            (4.4579, -16.2),
            (4.5695, -18.3),
            (4.7966, -18.9),
            (5.0066, -16.6),
            (5.3043, -19.9),
            (9.6586, -29.7),
        ];
        let taps = TABLE
            .iter()
            .map(|&(normalized_delay, power_db)| ProfileTap {
                normalized_delay,
                power_db,
            })
            .collect();
        Self::new(taps, delay_spread_s, subcarrier_spacing_hz).expect("static table is valid")
    }

    /// Small 3-tap profile for fast tests.
    pub fn toy(delay_spread_s: f64, subcarrier_spacing_hz: f64) -> Self {
        let taps = vec![
            ProfileTap {
                normalized_delay: 0.0,
                power_db: 0.0,
            },
            ProfileTap {
                normalized_delay: 0.5,
                power_db: -3.0,
            },
            ProfileTap {
                normalized_delay: 1.0,
                power_db: -6.0,
            },
        ];
        Self::new(taps, delay_spread_s, subcarrier_spacing_hz).expect("static profile is valid")
    }

    pub fn taps(&self) -> &[ProfileTap] {
        &self.taps
    }

    /// Normalized linear tap powers (sum to 1).
    pub fn linear_powers(&self) -> &[f64] {
        &self.linear_powers
    }
}

/// One realized tap: absolute delay plus complex gain.
#[derive(Debug, Clone, Copy)]
pub struct TapRealization {
    pub delay_s: f64,
    pub gain: Complex,
}

/// Draw one tap realization per profile tap. Gains are CN(0, p_l) with p_l
/// the normalized linear tap power; delays are scaled by the delay spread.
pub fn tap_realization(profile: &DelayProfile, rng: &mut impl Rng) -> Result<Vec<TapRealization>> {
    if profile.taps.is_empty() {
        return Err(Error::Config("delay profile needs at least one tap".into()));
    }
    let mut out = Vec::with_capacity(profile.taps.len());
    for (tap, &power) in profile.taps.iter().zip(&profile.linear_powers) {
        let sigma = (power / 2.0).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        out.push(TapRealization {
            delay_s: tap.normalized_delay * profile.delay_spread_s,
            gain: Complex::new(re * sigma, im * sigma),
        });
    }
    Ok(out)
}

/// Frequency response of a tap set on a K-point subcarrier grid:
/// `H[k] = sum_l g_l * exp(-j 2 pi k spacing tau_l)`.
pub fn frequency_response(taps: &[TapRealization], k: usize, spacing_hz: f64) -> Vec<Complex> {
    let mut response = vec![Complex::new(0.0, 0.0); k];
    for tap in taps {
        let phase_step = -TAU * spacing_hz * tap.delay_s;
        for (kappa, slot) in response.iter_mut().enumerate() {
            let phase = phase_step * kappa as f64;
            *slot += tap.gain * Complex::new(phase.cos(), phase.sin());
        }
    }
    response
}

/// Batch of frequency-domain channels, shape (B, N, M, K).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBatch {
    pub dims: SystemDims,
    data: Vec<Complex>,
}

impl ChannelBatch {
    pub fn from_data(dims: SystemDims, data: Vec<Complex>) -> Result<Self> {
        if data.len() != dims.tensor_len() {
            return Err(Error::Shape(format!(
                "channel tensor needs {} entries, got {}",
                dims.tensor_len(),
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Shape("non-finite channel entry".into()));
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

    /// Per-subcarrier channel matrix H (M x N): column n is UE n's channel.
    pub fn channel_matrix(&self, b: usize, k: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.dims.m_rx, self.dims.n_ues, |m, n| self.at(b, n, m, k))
    }
}

fn entry_response(
    dims: &SystemDims,
    profile: &DelayProfile,
    seed: u64,
    b: usize,
    n: usize,
    m: usize,
) -> Vec<Complex> {
    let mut rng = rng_for(seed, &[stream::CHANNEL_ENTRY, b as u64, n as u64, m as u64]);
    let taps = tap_realization(profile, &mut rng).expect("profile validated at construction");
    frequency_response(&taps, dims.k_subcarriers, profile.subcarrier_spacing_hz)
}

/// Generate a batch of channels. Each (batch item, UE, antenna) triple draws
/// its own seeded stream, so the result depends only on `(dims, profile,
/// seed)` and not on how the loop below is scheduled.
pub fn generate_batch(dims: &SystemDims, profile: &DelayProfile, seed: u64) -> ChannelBatch {
    #[cfg(feature = "parallel")]
    {
        generate_batch_par(dims, profile, seed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        generate_batch_seq(dims, profile, seed)
    }
}

/// Sequential generation path.
pub fn generate_batch_seq(dims: &SystemDims, profile: &DelayProfile, seed: u64) -> ChannelBatch {
    let k = dims.k_subcarriers;
    let mut data = vec![Complex::new(0.0, 0.0); dims.tensor_len()];
    for b in 0..dims.batch {
        for n in 0..dims.n_ues {
            for m in 0..dims.m_rx {
                let response = entry_response(dims, profile, seed, b, n, m);
                let base = dims.index(b, n, m, 0);
                data[base..base + k].copy_from_slice(&response);
            }
        }
    }
    ChannelBatch { dims: *dims, data }
}

/// Rayon generation path; bit-identical to [`generate_batch_seq`].
#[cfg(feature = "parallel")]
pub fn generate_batch_par(dims: &SystemDims, profile: &DelayProfile, seed: u64) -> ChannelBatch {
    let k = dims.k_subcarriers;
    let mut data = vec![Complex::new(0.0, 0.0); dims.tensor_len()];
    data.par_chunks_mut(k)
        .enumerate()
        .for_each(|(flat, chunk)| {
            let m = flat % dims.m_rx;
            let n = (flat / dims.m_rx) % dims.n_ues;
            let b = flat / (dims.m_rx * dims.n_ues);
            let response = entry_response(dims, profile, seed, b, n, m);
            chunk.copy_from_slice(&response);
        });
    ChannelBatch { dims: *dims, data }
}

/// Linear noise variance for an SNR in dB under unit signal power.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

const DATASET_MAGIC: &[u8; 4] = b"NNBF";
const DATASET_VERSION: u32 = 1;

/// Write a dataset: magic, version, B/N/M/K, batch count (all u32 LE), then
/// interleaved (re, im) f32 LE pairs in (batch, B, N, M, K) order. Storage is
/// f32 to halve file size; computation stays in f64.
///
/// The file is written to a temporary sibling and renamed into place, so a
/// failed run never leaves a partial dataset at `path`.
pub fn save_dataset(batches: &[ChannelBatch], path: &Path) -> Result<()> {
    let dims = match batches.first() {
        Some(b) => b.dims,
        None => return Err(Error::Config("refusing to save an empty dataset".into())),
    };
    if batches.iter().any(|b| b.dims != dims) {
        return Err(Error::Shape("batches with mixed dimensions".into()));
    }
    for &d in &[
        dims.batch,
        dims.n_ues,
        dims.m_rx,
        dims.k_subcarriers,
        batches.len(),
    ] {
        if d > u32::MAX as usize {
            return Err(Error::Format(format!(
                "dimension {d} overflows the u32 header"
            )));
        }
    }

    let mut buf = Vec::with_capacity(24 + batches.len() * dims.tensor_len() * 8);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for d in [
        dims.batch,
        dims.n_ues,
        dims.m_rx,
        dims.k_subcarriers,
        batches.len(),
    ] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for batch in batches {
        for z in batch.data() {
            buf.extend_from_slice(&(z.re as f32).to_le_bytes());
            buf.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
    }

    crate::write_atomic(path, &buf)
}

/// Read a dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Vec<ChannelBatch>> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 28];
    file.read_exact(&mut header)
        .map_err(|_| Error::Format("truncated dataset header".into()))?;
    if &header[0..4] != DATASET_MAGIC {
        return Err(Error::Format(
            "bad magic bytes, not a channel dataset".into(),
        ));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version}, expected {DATASET_VERSION}"
        )));
    }
    let (b, n, m, k, count) = (
        word(8) as usize,
        word(12) as usize,
        word(16) as usize,
        word(20) as usize,
        word(24) as usize,
    );
    let dims = SystemDims::new(n, m, k, b)
        .map_err(|e| Error::Format(format!("invalid dimensions in header: {e}")))?;
    let per_batch_bytes = dims
        .tensor_len()
        .checked_mul(8)
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    let total = per_batch_bytes
        .checked_mul(count)
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;

    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != total {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {total}",
            payload.len()
        )));
    }

    let mut batches = Vec::with_capacity(count);
    for c in 0..count {
        let chunk = &payload[c * per_batch_bytes..(c + 1) * per_batch_bytes];
        let mut data = Vec::with_capacity(dims.tensor_len());
        for pair in chunk.chunks_exact(8) {
            let re = f32::from_le_bytes(pair[0..4].try_into().unwrap()) as f64;
            let im = f32::from_le_bytes(pair[4..8].try_into().unwrap()) as f64;
            data.push(Complex::new(re, im));
        }
        batches.push(
            ChannelBatch::from_data(dims, data)
                .map_err(|e| Error::Format(format!("invalid payload: {e}")))?,
        );
    }
    Ok(batches)
}

/// One deterministic dataset: `count` batches seeded off `(seed, tag, i)`.
pub fn generate_dataset(
    dims: &SystemDims,
    profile: &DelayProfile,
    seed: u64,
    tag: u64,
    count: usize,
) -> Vec<ChannelBatch> {
    (0..count)
        .map(|i| generate_batch(dims, profile, mix(seed, &[tag, i as u64])))
        .collect()
}
