//! Subcommand implementations.

use crate::config::ExperimentConfig;
use crate::CliError;
use nnbf_core::beamform::RateWeights;
use nnbf_core::channel::{
    generate_batch, generate_dataset, load_dataset, noise_variance, save_dataset, ChannelBatch,
    SystemDims,
};
use nnbf_core::nnbf::checkpoint::{load_checkpoint, save_checkpoint};
use nnbf_core::nnbf::eval::{evaluate_sum_rate, write_sweep_csv};
use nnbf_core::nnbf::train::{train as train_network, TrainData};
use nnbf_core::nnbf::{build_network, NnbfNetwork};
use nnbf_core::rng::{mix, stream};
use nnbf_core::Error;
use std::path::Path;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    nnbf_core::write_atomic(path, text.as_bytes()).map_err(runtime)
}

/// `gen-data`: write train.nnbf and val.nnbf under the data directory.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dims = cfg.dims()?;
    let profile = cfg.delay_profile()?;

    let train_set = generate_dataset(
        &dims,
        &profile,
        cfg.seed,
        stream::TRAIN_DATA,
        cfg.train_batches,
    );
    let val_set = generate_dataset(&dims, &profile, cfg.seed, stream::VAL_DATA, cfg.val_batches);

    let train_path = cfg.train_set_path();
    let val_path = cfg.val_set_path();
    save_dataset(&train_set, &train_path).map_err(runtime)?;
    save_dataset(&val_set, &val_path).map_err(runtime)?;

    let bytes = |p: &Path| std::fs::metadata(p).map(|m| m.len()).unwrap_or(0);
    println!(
        "generated datasets: N={} M={} K={} B={} seed={}",
        dims.n_ues, dims.m_rx, dims.k_subcarriers, dims.batch, cfg.seed
    );
    println!(
        "  {} ({} batches, {} bytes)",
        train_path.display(),
        cfg.train_batches,
        bytes(&train_path)
    );
    println!(
        "  {} ({} batches, {} bytes)",
        val_path.display(),
        cfg.val_batches,
        bytes(&val_path)
    );
    Ok(())
}

fn load_required(path: &Path, what: &str) -> Result<Vec<ChannelBatch>, CliError> {
    if !path.exists() {
        return Err(usage(format!(
            "{what} dataset {} not found; run `nnbf gen-data` first",
            path.display()
        )));
    }
    load_dataset(path).map_err(runtime)
}

/// `train`: fit the network, write checkpoint + history CSV.
pub fn train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let train_cfg = cfg.train_config()?;
    let profile = cfg.delay_profile()?;

    // With --regen both splits come from the generator directly; otherwise
    // the persisted datasets are required.
    let (train_fixed, val_set) = if cfg.regen {
        (
            None,
            generate_dataset(
                &train_cfg.dims,
                &profile,
                cfg.seed,
                stream::VAL_DATA,
                cfg.val_batches,
            ),
        )
    } else {
        (
            Some(load_required(&cfg.train_set_path(), "training")?),
            load_required(&cfg.val_set_path(), "validation")?,
        )
    };
    let train_data = match &train_fixed {
        Some(batches) => TrainData::Fixed(batches),
        None => TrainData::Regenerate {
            profile: &profile,
            batches_per_epoch: cfg.train_batches,
        },
    };

    let started = std::time::Instant::now();
    let (net, history) = match train_network(&train_cfg, train_data, &val_set) {
        Ok(out) => out,
        Err(Error::NanAbort(diag)) => {
            return Err(CliError::Runtime(format!("non-finite loss: {diag}")))
        }
        Err(Error::Config(msg)) | Err(Error::Shape(msg)) => return Err(usage(msg)),
        Err(other) => return Err(runtime(other)),
    };

    save_checkpoint(&net, None, &cfg.checkpoint_path()).map_err(runtime)?;
    write_text(&cfg.history_path(), &history.to_csv())?;

    let last = history.records.last().expect("at least one epoch");
    println!(
        "trained {} epochs in {:.1}s (final train loss {:.6}, val loss {:.6})",
        history.records.len(),
        started.elapsed().as_secs_f64(),
        last.train_loss,
        last.val_loss
    );
    println!("  checkpoint: {}", cfg.checkpoint_path().display());
    println!("  history:    {}", cfg.history_path().display());
    Ok(())
}

/// `eval`: sum-rate sweep CSVs for the configured geometry or a preset list.
pub fn eval(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    preset: Option<&str>,
) -> Result<(), CliError> {
    let grid = cfg.snr_grid()?;
    let loaded = match checkpoint {
        Some(path) => {
            if !path.exists() {
                return Err(usage(format!("checkpoint {} not found", path.display())));
            }
            Some(load_checkpoint(path).map_err(usage)?.0)
        }
        None => None,
    };

    let geometries: Vec<(usize, usize)> = match preset {
        None => vec![(cfg.ues, cfg.rx)],
        Some("one-to-one") => vec![(4, 4), (8, 8), (12, 12)],
        Some("one-to-four") => vec![(8, 32), (16, 64)],
        Some(other) => {
            return Err(usage(format!(
                "unknown preset {other:?} (expected one-to-one or one-to-four)"
            )))
        }
    };
    let multi = geometries.len() > 1;

    for (n, m) in geometries {
        let dims = SystemDims::new(n, m, cfg.k_subcarriers(), cfg.batch).map_err(usage)?;
        let mut net = match &loaded {
            Some(net) => {
                let arch = net.dims;
                if (arch.n_ues, arch.m_rx, arch.k_subcarriers)
                    != (dims.n_ues, dims.m_rx, dims.k_subcarriers)
                {
                    if multi {
                        // Preset geometries the checkpoint cannot serve fall
                        // back to baselines only.
                        None
                    } else {
                        return Err(usage(format!(
                            "checkpoint is for N={} M={} K={}, configured N={} M={} K={}",
                            arch.n_ues,
                            arch.m_rx,
                            arch.k_subcarriers,
                            dims.n_ues,
                            dims.m_rx,
                            dims.k_subcarriers
                        )));
                    }
                } else {
                    Some(rebuild_with_weights(net, dims)?)
                }
            }
            None => None,
        };

        // Preset sweeps run on freshly generated held-out channels; the
        // single-geometry sweep uses the persisted validation set.
        let dataset = if multi || !cfg.val_set_path().exists() {
            let profile = cfg.delay_profile()?;
            generate_dataset(
                &dims,
                &profile,
                mix(cfg.seed, &[stream::EVAL_DATA, n as u64, m as u64]),
                stream::EVAL_DATA,
                cfg.val_batches,
            )
        } else {
            let data = load_required(&cfg.val_set_path(), "evaluation")?;
            if data[0].dims != dims {
                return Err(usage(format!(
                    "dataset dims {:?} do not match configured dims {dims:?}",
                    data[0].dims
                )));
            }
            data
        };

        let alpha = RateWeights::uniform(dims.n_ues);
        let rows = evaluate_sum_rate(net.as_mut(), &dataset, &grid, &alpha).map_err(runtime)?;
        let name = if multi {
            format!("sweep_{n}x{m}.csv")
        } else {
            "sweep.csv".to_string()
        };
        let path = cfg.out_dir.join(name);
        write_text(&path, &write_sweep_csv(&rows))?;
        println!("wrote {} ({} rows)", path.display(), rows.len());
    }
    Ok(())
}

/// A loaded checkpoint carries its architecture; clone the weights into a
/// network whose dims also carry the evaluation batch size.
fn rebuild_with_weights(source: &NnbfNetwork, dims: SystemDims) -> Result<NnbfNetwork, CliError> {
    let mut net =
        nnbf_core::nnbf::build_network_with(&dims, source.hidden_width, source.sigma_feature, 0)
            .map_err(usage)?;
    for ((_, dst), (_, src)) in net
        .named_parameters()
        .iter()
        .zip(source.named_parameters().iter())
    {
        dst.set_data(&src.data());
    }
    for (name, values) in source.named_buffers() {
        net.set_buffer(&name, values).map_err(runtime)?;
    }
    Ok(net)
}

struct TimingRecord {
    method: &'static str,
    n_ues: usize,
    m_rx: usize,
    k_subcarriers: usize,
    mean_ms: f64,
    std_ms: f64,
    repetitions: usize,
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / samples.len() as f64;
    (mean, var.sqrt())
}

fn timed(f: &mut impl FnMut()) -> f64 {
    let t = std::time::Instant::now();
    f();
    t.elapsed().as_secs_f64() * 1e3
}

/// `bench`: time per-batch beamformer computation (weights from H only) for
/// zfbf, mmse, and the network in eval mode, across the configured UE list.
pub fn bench(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.bench_reps < 10 {
        return Err(usage(format!(
            "bench-reps must be at least 10, got {}",
            cfg.bench_reps
        )));
    }
    if cfg.bench_ues.is_empty() {
        return Err(usage("bench-ues must not be empty"));
    }
    let profile = cfg.delay_profile()?;
    let k_sub = cfg.k_subcarriers();
    let m_rx = cfg.bench_rx;
    let sigma2 = noise_variance(20.0);

    let mut records: Vec<TimingRecord> = Vec::new();
    for &n in &cfg.bench_ues {
        if n > m_rx {
            return Err(usage(format!(
                "bench UE count {n} exceeds receive antennas {m_rx}"
            )));
        }
        let dims = SystemDims::new(n, m_rx, k_sub, cfg.batch).map_err(usage)?;
        let h = generate_batch(&dims, &profile, mix(cfg.seed, &[stream::BENCH, n as u64]));

        // Timing runs pinned to one thread for stable measurements. The
        // three methods are timed interleaved, one sample each per round, so
        // slow drift in machine load biases none of them.
        let outcome = run_single_threaded(move || -> Result<[(f64, f64); 3], Error> {
            let matrices: Vec<_> = (0..dims.batch)
                .flat_map(|b| (0..dims.k_subcarriers).map(move |k| (b, k)))
                .map(|(b, k)| h.channel_matrix(b, k))
                .collect();
            let mut net = build_network(&dims, cfg.hidden, cfg.seed)?;

            let mut run_zf = || {
                for hm in &matrices {
                    std::hint::black_box(nnbf_core::beamform::zfbf(hm).unwrap());
                }
            };
            let mut run_mmse = || {
                for hm in &matrices {
                    std::hint::black_box(nnbf_core::beamform::mmse(hm, sigma2).unwrap());
                }
            };
            let mut run_nn = || {
                std::hint::black_box(net.forward_beamformer(&h).unwrap());
            };

            // Two warm rounds before measuring.
            for _ in 0..2 {
                run_zf();
                run_mmse();
                run_nn();
            }
            let mut zf_samples = Vec::with_capacity(cfg.bench_reps);
            let mut mmse_samples = Vec::with_capacity(cfg.bench_reps);
            let mut nn_samples = Vec::with_capacity(cfg.bench_reps);
            for _ in 0..cfg.bench_reps {
                zf_samples.push(timed(&mut run_zf));
                mmse_samples.push(timed(&mut run_mmse));
                nn_samples.push(timed(&mut run_nn));
            }
            Ok([
                mean_std(&zf_samples),
                mean_std(&mmse_samples),
                mean_std(&nn_samples),
            ])
        })
        .map_err(runtime)?;

        for (method, (mean_ms, std_ms)) in ["zfbf", "mmse", "nnbf"].iter().zip(outcome) {
            records.push(TimingRecord {
                method,
                n_ues: n,
                m_rx,
                k_subcarriers: k_sub,
                mean_ms,
                std_ms,
                repetitions: cfg.bench_reps,
            });
        }
        println!(
            "N={n:3}: zfbf {:.3} ms  mmse {:.3} ms  nnbf {:.3} ms (per batch of {})",
            outcome[0].0, outcome[1].0, outcome[2].0, cfg.batch
        );
    }

    let mut csv = String::from("method,n_ues,m_rx,k_subcarriers,mean_ms,std_ms,repetitions\n");
    for r in &records {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method, r.n_ues, r.m_rx, r.k_subcarriers, r.mean_ms, r.std_ms, r.repetitions
        ));
    }
    let path = cfg.out_dir.join("bench.csv");
    write_text(&path, &csv)?;
    println!("wrote {}", path.display());

    // Scaling summary: how much each method slows down from the smallest to
    // the largest UE count. Machine dependent, reported only.
    if cfg.bench_ues.len() > 1 {
        let n_lo = *cfg.bench_ues.iter().min().unwrap();
        let n_hi = *cfg.bench_ues.iter().max().unwrap();
        for method in ["zfbf", "mmse", "nnbf"] {
            let at = |n: usize| {
                records
                    .iter()
                    .find(|r| r.method == method && r.n_ues == n)
                    .map(|r| r.mean_ms)
                    .unwrap_or(f64::NAN)
            };
            println!(
                "scaling {method}: t(N={n_hi}) / t(N={n_lo}) = {:.2}",
                at(n_hi) / at(n_lo)
            );
        }
    }
    Ok(())
}

/// Run `f` inside a one-thread rayon pool so internally parallel kernels
/// execute sequentially during timing.
fn run_single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("building a local thread pool")
        .install(f)
}
