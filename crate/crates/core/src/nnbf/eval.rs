//! Sum-rate sweep evaluation of the neural beamformer against the ZFBF and
//! MMSE baselines.

use super::NnbfNetwork;
use crate::beamform::{self, BeamformerSet, RateWeights};
use crate::channel::{noise_variance, ChannelBatch};
use crate::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Beamforming method labels used in result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Nnbf,
    Zfbf,
    Mmse,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Nnbf => "nnbf",
            Method::Zfbf => "zfbf",
            Method::Mmse => "mmse",
        }
    }
}

/// One sweep table row: mean sum-rate of a method at one SNR point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub snr_db: f64,
    pub method: Method,
    pub mean_sum_rate: f64,
    pub n_samples: usize,
    pub n_skipped: usize,
}

/// CSV with header `snr_db,method,mean_sum_rate_bps_hz,n_samples,n_skipped`.
pub fn write_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("snr_db,method,mean_sum_rate_bps_hz,n_samples,n_skipped\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.snr_db,
            r.method.as_str(),
            r.mean_sum_rate,
            r.n_samples,
            r.n_skipped
        ));
    }
    out
}

/// Per-(batch item) accumulation: for each SNR point, the summed rates and
/// evaluated/skipped counts for zfbf, mmse, and optionally nnbf.
struct ItemSums {
    zf_sum: Vec<f64>,
    zf_count: Vec<usize>,
    zf_skipped: Vec<usize>,
    mmse_sum: Vec<f64>,
    mmse_count: Vec<usize>,
    mmse_skipped: Vec<usize>,
    nnbf_sum: Vec<f64>,
    nnbf_count: Vec<usize>,
}

/// Rates for one batch item over all subcarriers and SNR points. Baselines
/// that hit a singular channel skip that (item, subcarrier) sample and count
/// it; the neural beamformer needs no inversion and always evaluates.
/// `nnbf_weights` holds either one weight set (SNR-independent network) or
/// one per SNR point (sigma-feature network).
fn item_sums(
    h: &ChannelBatch,
    item: usize,
    nnbf_weights: Option<&[BeamformerSet]>,
    sigma2_grid: &[f64],
    alpha: &RateWeights,
) -> ItemSums {
    let n_snr = sigma2_grid.len();
    let k_sub = h.dims.k_subcarriers;
    let mut sums = ItemSums {
        zf_sum: vec![0.0; n_snr],
        zf_count: vec![0; n_snr],
        zf_skipped: vec![0; n_snr],
        mmse_sum: vec![0.0; n_snr],
        mmse_count: vec![0; n_snr],
        mmse_skipped: vec![0; n_snr],
        nnbf_sum: vec![0.0; n_snr],
        nnbf_count: vec![0; n_snr],
    };

    for k in 0..k_sub {
        let hm = h.channel_matrix(item, k);
        // ZFBF weights do not depend on the noise level.
        let wz = beamform::zfbf(&hm).ok();
        for (s, &sigma2) in sigma2_grid.iter().enumerate() {
            match &wz {
                Some(w) => match beamform::sinr_per_ue(w, &hm, sigma2)
                    .and_then(|g| beamform::sum_rate(&g, alpha))
                {
                    Ok(rate) => {
                        sums.zf_sum[s] += rate;
                        sums.zf_count[s] += 1;
                    }
                    Err(_) => sums.zf_skipped[s] += 1,
                },
                None => sums.zf_skipped[s] += 1,
            }
            match beamform::mmse(&hm, sigma2).and_then(|w| {
                beamform::sinr_per_ue(&w, &hm, sigma2).and_then(|g| beamform::sum_rate(&g, alpha))
            }) {
                Ok(rate) => {
                    sums.mmse_sum[s] += rate;
                    sums.mmse_count[s] += 1;
                }
                Err(_) => sums.mmse_skipped[s] += 1,
            }
            if let Some(sets) = nnbf_weights {
                let set = if sets.len() == 1 { &sets[0] } else { &sets[s] };
                let wn = set.weight_matrix(item, k);
                let rate = beamform::sinr_per_ue(&wn, &hm, sigma2)
                    .and_then(|g| beamform::sum_rate(&g, alpha))
                    .expect("normalized network weights have positive row energy");
                sums.nnbf_sum[s] += rate;
                sums.nnbf_count[s] += 1;
            }
        }
    }
    sums
}

fn assemble_rows(snr_grid_db: &[f64], items: &[ItemSums], include_nnbf: bool) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for (s, &snr_db) in snr_grid_db.iter().enumerate() {
        if include_nnbf {
            let total: f64 = items.iter().map(|i| i.nnbf_sum[s]).sum();
            let count: usize = items.iter().map(|i| i.nnbf_count[s]).sum();
            rows.push(SweepRow {
                snr_db,
                method: Method::Nnbf,
                mean_sum_rate: total / count.max(1) as f64,
                n_samples: count,
                n_skipped: 0,
            });
        }
        for (method, sum, count, skipped) in [
            (
                Method::Zfbf,
                items.iter().map(|i| i.zf_sum[s]).sum::<f64>(),
                items.iter().map(|i| i.zf_count[s]).sum::<usize>(),
                items.iter().map(|i| i.zf_skipped[s]).sum::<usize>(),
            ),
            (
                Method::Mmse,
                items.iter().map(|i| i.mmse_sum[s]).sum::<f64>(),
                items.iter().map(|i| i.mmse_count[s]).sum::<usize>(),
                items.iter().map(|i| i.mmse_skipped[s]).sum::<usize>(),
            ),
        ] {
            rows.push(SweepRow {
                snr_db,
                method,
                mean_sum_rate: sum / count.max(1) as f64,
                n_samples: count,
                n_skipped: skipped,
            });
        }
    }
    rows
}

/// Evaluate mean sum-rates over `dataset` for every SNR in `snr_grid_db`.
/// With a network, rows for nnbf/zfbf/mmse are emitted per SNR point (in
/// that order); without one, only the baselines. Rates are averaged over
/// batch items and subcarriers.
pub fn evaluate_sum_rate(
    net: Option<&mut NnbfNetwork>,
    dataset: &[ChannelBatch],
    snr_grid_db: &[f64],
    alpha: &RateWeights,
) -> Result<Vec<SweepRow>> {
    evaluate_impl(net, dataset, snr_grid_db, alpha, true)
}

/// Sequential evaluation path (identical results; used by the benchmarks).
pub fn evaluate_sum_rate_seq(
    net: Option<&mut NnbfNetwork>,
    dataset: &[ChannelBatch],
    snr_grid_db: &[f64],
    alpha: &RateWeights,
) -> Result<Vec<SweepRow>> {
    evaluate_impl(net, dataset, snr_grid_db, alpha, false)
}

fn evaluate_impl(
    net: Option<&mut NnbfNetwork>,
    dataset: &[ChannelBatch],
    snr_grid_db: &[f64],
    alpha: &RateWeights,
    parallel: bool,
) -> Result<Vec<SweepRow>> {
    if dataset.is_empty() {
        return Err(Error::Config("empty evaluation dataset".into()));
    }
    if snr_grid_db.is_empty() {
        return Err(Error::Config("empty SNR grid".into()));
    }
    let dims = dataset[0].dims;
    if dataset.iter().any(|b| b.dims != dims) {
        return Err(Error::Shape("evaluation batches with mixed dims".into()));
    }
    let sigma2_grid: Vec<f64> = snr_grid_db.iter().map(|&s| noise_variance(s)).collect();

    // The graph is single-threaded, so network weights are materialized up
    // front; the per-item metric evaluation below is freely parallel. An
    // SNR-independent network forwards once per batch, a sigma-feature
    // network once per (batch, SNR point).
    let include_nnbf = net.is_some();
    let nnbf_weights: Vec<Option<Vec<BeamformerSet>>> = match net {
        Some(net) => {
            let mut all = Vec::with_capacity(dataset.len());
            for batch in dataset {
                let sets = if net.sigma_feature {
                    sigma2_grid
                        .iter()
                        .map(|&s2| net.forward_beamformer_with(batch, Some(&vec![s2; dims.batch])))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    vec![net.forward_beamformer(batch)?]
                };
                all.push(Some(sets));
            }
            all
        }
        None => vec![None; dataset.len()],
    };

    let work: Vec<(usize, usize)> = (0..dataset.len())
        .flat_map(|b| (0..dims.batch).map(move |i| (b, i)))
        .collect();

    let run = |&(b, i): &(usize, usize)| {
        item_sums(
            &dataset[b],
            i,
            nnbf_weights[b].as_deref(),
            &sigma2_grid,
            alpha,
        )
    };

    let items: Vec<ItemSums> = if parallel {
        #[cfg(feature = "parallel")]
        {
            work.par_iter().map(run).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            work.iter().map(run).collect()
        }
    } else {
        work.iter().map(run).collect()
    };

    Ok(assemble_rows(snr_grid_db, &items, include_nnbf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_dataset, DelayProfile, SystemDims};
    use crate::nnbf::build_network;
    use crate::nnbf::train::default_snr_grid;

    fn dataset(dims: &SystemDims, count: usize) -> Vec<ChannelBatch> {
        generate_dataset(dims, &DelayProfile::toy(30e-9, 30e3), 42, 0, count)
    }

    #[test]
    fn default_grid_produces_33_rows_with_network() {
        let dims = SystemDims::new(2, 4, 12, 2).unwrap();
        let data = dataset(&dims, 2);
        let mut net = build_network(&dims, 32, 1).unwrap();
        let alpha = RateWeights::uniform(dims.n_ues);
        let rows = evaluate_sum_rate(Some(&mut net), &data, &default_snr_grid(), &alpha).unwrap();
        assert_eq!(rows.len(), 33);
        // Per SNR point: nnbf, zfbf, mmse in order.
        assert_eq!(rows[0].method, Method::Nnbf);
        assert_eq!(rows[1].method, Method::Zfbf);
        assert_eq!(rows[2].method, Method::Mmse);
        for r in &rows {
            assert!(r.mean_sum_rate.is_finite());
        }
    }

    #[test]
    fn mmse_dominates_zfbf_and_converges_at_high_snr() {
        let dims = SystemDims::new(4, 8, 12, 4).unwrap();
        let data = dataset(&dims, 3);
        let alpha = RateWeights::uniform(dims.n_ues);
        let rows = evaluate_sum_rate(None, &data, &default_snr_grid(), &alpha).unwrap();
        for pair in rows.chunks(2) {
            let (zf, mmse) = (&pair[0], &pair[1]);
            assert_eq!(zf.method, Method::Zfbf);
            assert_eq!(mmse.method, Method::Mmse);
            assert!(
                mmse.mean_sum_rate >= zf.mean_sum_rate - 1e-9,
                "snr {}: mmse {} < zfbf {}",
                zf.snr_db,
                mmse.mean_sum_rate,
                zf.mean_sum_rate
            );
        }
        let at_35 = rows.iter().filter(|r| r.snr_db == 35.0).collect::<Vec<_>>();
        let zf = at_35.iter().find(|r| r.method == Method::Zfbf).unwrap();
        let mmse = at_35.iter().find(|r| r.method == Method::Mmse).unwrap();
        let gap = (mmse.mean_sum_rate - zf.mean_sum_rate).abs() / zf.mean_sum_rate;
        assert!(gap < 0.01, "relative gap at 35 dB: {gap}");
    }

    #[test]
    fn sigma_feature_networks_sweep_per_snr() {
        let dims = SystemDims::new(2, 3, 12, 2).unwrap();
        let data = dataset(&dims, 1);
        let mut net = crate::nnbf::build_network_with(&dims, 16, true, 9).unwrap();
        let alpha = RateWeights::uniform(dims.n_ues);
        let rows = evaluate_sum_rate(Some(&mut net), &data, &default_snr_grid(), &alpha).unwrap();
        assert_eq!(rows.len(), 33);
        let nnbf_rows: Vec<&SweepRow> = rows.iter().filter(|r| r.method == Method::Nnbf).collect();
        assert_eq!(nnbf_rows.len(), 11);
        assert!(nnbf_rows.iter().all(|r| r.mean_sum_rate.is_finite()));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_sequential_evaluation_agree() {
        let dims = SystemDims::new(2, 4, 12, 3).unwrap();
        let data = dataset(&dims, 2);
        let alpha = RateWeights::uniform(dims.n_ues);
        let grid = [-5.0, 10.0, 25.0];
        let par = evaluate_sum_rate(None, &data, &grid, &alpha).unwrap();
        let seq = evaluate_sum_rate_seq(None, &data, &grid, &alpha).unwrap();
        assert_eq!(par.len(), seq.len());
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(a.mean_sum_rate.to_bits(), b.mean_sum_rate.to_bits());
            assert_eq!(a.n_samples, b.n_samples);
        }
    }

    #[test]
    fn csv_format_is_stable() {
        let rows = vec![SweepRow {
            snr_db: -15.0,
            method: Method::Zfbf,
            mean_sum_rate: 0.25,
            n_samples: 96,
            n_skipped: 0,
        }];
        let csv = write_sweep_csv(&rows);
        assert_eq!(
            csv,
            "snr_db,method,mean_sum_rate_bps_hz,n_samples,n_skipped\n-15,zfbf,0.25,96,0\n"
        );
    }
}
