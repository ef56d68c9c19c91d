//! End-to-end tests of the `nnbf` binary: artifact layout, determinism, CSV
//! contracts, and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn nnbf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnbf"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn sha256(path: &Path) -> String {
    // Cheap content fingerprint; avoids pulling a hash crate into the tests.
    let bytes = std::fs::read(path).unwrap();
    format!(
        "{}:{:x}",
        bytes.len(),
        bytes.iter().fold(0u128, |acc, &b| acc
            .wrapping_mul(1099511628211)
            .wrapping_add(b as u128))
    )
}

const SMALL: &[&str] = &[
    "--ues",
    "2",
    "--rx",
    "2",
    "--rb",
    "1",
    "--batch",
    "2",
    "--hidden",
    "16",
    "--train-batches",
    "3",
    "--val-batches",
    "2",
];
const FAST: &[&str] = &[
    "--ues",
    "2",
    "--rx",
    "2",
    "--rb",
    "1",
    "--batch",
    "2",
    "--hidden",
    "16",
    "--train-batches",
    "3",
    "--val-batches",
    "2",
    "--seed",
    "5",
];

#[test]
fn gen_data_is_deterministic_and_respects_rb() {
    let dir = tempfile::tempdir().unwrap();
    let out = nnbf(&[&["gen-data"], FAST].concat(), dir.path());
    assert_success(&out);
    let train = dir.path().join("data/train.nnbf");
    let val = dir.path().join("data/val.nnbf");
    assert!(train.exists() && val.exists());
    let first = sha256(&train);

    // Same seed reproduces the same bytes; a different seed does not.
    let out = nnbf(&[&["gen-data"], FAST].concat(), dir.path());
    assert_success(&out);
    assert_eq!(sha256(&train), first);

    let out = nnbf(
        &[&["gen-data"], SMALL, &["--seed", "6"]].concat(),
        dir.path(),
    );
    assert_success(&out);
    assert_ne!(sha256(&train), first);

    let batches = nnbf_core::channel::load_dataset(&train).unwrap();
    assert_eq!(batches.len(), 3);
    assert_eq!(batches[0].dims.k_subcarriers, 12);
}

#[test]
fn train_writes_artifacts_with_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    assert_success(&nnbf(&[&["gen-data"], FAST].concat(), dir.path()));
    let out = nnbf(&[&["train", "--epochs", "2"], FAST].concat(), dir.path());
    assert_success(&out);

    assert!(dir.path().join("out/checkpoint.nnbw").exists());
    let history = std::fs::read_to_string(dir.path().join("out/history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,lr,seconds");
    assert_eq!(lines.len(), 3, "2 epochs -> 2 data rows");
}

#[test]
fn train_without_datasets_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = nnbf(&[&["train", "--epochs", "1"], FAST].concat(), dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn regen_training_needs_no_dataset_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = nnbf(
        &[&["train", "--epochs", "1", "--regen"], FAST].concat(),
        dir.path(),
    );
    assert_success(&out);
    assert!(dir.path().join("out/checkpoint.nnbw").exists());
}

#[test]
fn eval_emits_rows_for_all_methods_and_snrs() {
    let dir = tempfile::tempdir().unwrap();
    assert_success(&nnbf(&[&["gen-data"], FAST].concat(), dir.path()));
    assert_success(&nnbf(
        &[&["train", "--epochs", "1"], FAST].concat(),
        dir.path(),
    ));
    let out = nnbf(
        &[&["eval", "--checkpoint", "out/checkpoint.nnbw"], FAST].concat(),
        dir.path(),
    );
    assert_success(&out);

    let sweep = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(
        lines[0],
        "snr_db,method,mean_sum_rate_bps_hz,n_samples,n_skipped"
    );
    // Default grid -15..35 step 5 = 11 points x 3 methods.
    assert_eq!(lines.len() - 1, 33);
    for method in ["nnbf", "zfbf", "mmse"] {
        assert_eq!(
            lines
                .iter()
                .filter(|l| l.contains(&format!(",{method},")))
                .count(),
            11
        );
    }
}

#[test]
fn eval_without_checkpoint_runs_baselines_only() {
    let dir = tempfile::tempdir().unwrap();
    assert_success(&nnbf(&[&["gen-data"], FAST].concat(), dir.path()));
    let out = nnbf(&[&["eval"], FAST].concat(), dir.path());
    assert_success(&out);
    let sweep = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count() - 1, 22);
    assert!(!sweep.contains("nnbf"));
}

#[test]
fn eval_rejects_mismatched_checkpoint_dims() {
    let dir = tempfile::tempdir().unwrap();
    assert_success(&nnbf(&[&["gen-data"], FAST].concat(), dir.path()));
    assert_success(&nnbf(
        &[&["train", "--epochs", "1"], FAST].concat(),
        dir.path(),
    ));
    // Same checkpoint, different configured geometry.
    let out = nnbf(
        &[
            &["eval", "--checkpoint", "out/checkpoint.nnbw", "--ues", "3"],
            &["--rx", "2", "--rb", "1", "--batch", "2", "--seed", "5"][..],
        ]
        .concat(),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_presets_write_one_sweep_per_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let out = nnbf(
        &[
            &[
                "eval",
                "--preset",
                "one-to-one",
                "--rb",
                "1",
                "--batch",
                "2",
            ],
            &["--val-batches", "2", "--seed", "3", "--snr-step", "25"][..],
        ]
        .concat(),
        dir.path(),
    );
    assert_success(&out);
    for name in ["sweep_4x4.csv", "sweep_8x8.csv", "sweep_12x12.csv"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn bench_emits_complete_timing_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = nnbf(
        &[
            "bench",
            "--bench-ues",
            "2,4",
            "--bench-rx",
            "8",
            "--bench-reps",
            "10",
            "--rb",
            "1",
            "--batch",
            "2",
            "--hidden",
            "16",
            "--seed",
            "1",
        ],
        dir.path(),
    );
    assert_success(&out);
    let csv = std::fs::read_to_string(dir.path().join("out/bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "method,n_ues,m_rx,k_subcarriers,mean_ms,std_ms,repetitions"
    );
    assert_eq!(lines.len() - 1, 6, "3 methods x 2 UE counts");
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[2], "8");
        assert!(fields[4].parse::<f64>().unwrap() > 0.0);
        assert_eq!(fields[6], "10");
    }
}

#[test]
fn bench_rejects_too_few_repetitions() {
    let dir = tempfile::tempdir().unwrap();
    let out = nnbf(
        &[
            "bench",
            "--bench-reps",
            "3",
            "--bench-ues",
            "2",
            "--bench-rx",
            "4",
            "--rb",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes_and_help() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown flags are usage errors (exit 1).
    let out = nnbf(&["train", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = nnbf(&["gen-data", "--rb", "zero"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    // Help exits 0 and documents the common flags.
    for sub in ["gen-data", "train", "eval", "bench"] {
        let out = nnbf(&[sub, "--help"], dir.path());
        assert_eq!(out.status.code(), Some(0), "{sub} --help");
        let text = String::from_utf8_lossy(&out.stdout).to_string();
        for flag in [
            "--config",
            "--seed",
            "--out",
            "--ues",
            "--rx",
            "--rb",
            "--snr-min",
        ] {
            assert!(text.contains(flag), "{sub} --help missing {flag}");
        }
    }
}

#[test]
fn config_file_applies_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.conf"),
        "ues = 2\nrx = 2\nrb = 1\nbatch = 2\ntrain-batches = 2\nval-batches = 1\nseed = 9\n",
    )
    .unwrap();
    let out = nnbf(&["gen-data", "--config", "exp.conf"], dir.path());
    assert_success(&out);
    let batches = nnbf_core::channel::load_dataset(&dir.path().join("data/train.nnbf")).unwrap();
    assert_eq!(batches.len(), 2);
    assert_eq!(batches[0].dims.n_ues, 2);

    // A flag overrides the file.
    let out = nnbf(
        &["gen-data", "--config", "exp.conf", "--train-batches", "4"],
        dir.path(),
    );
    assert_success(&out);
    let batches = nnbf_core::channel::load_dataset(&dir.path().join("data/train.nnbf")).unwrap();
    assert_eq!(batches.len(), 4);

    // Unknown config keys are rejected.
    std::fs::write(dir.path().join("bad.conf"), "nope = 1\n").unwrap();
    let out = nnbf(&["gen-data", "--config", "bad.conf"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn training_runs_are_byte_reproducible() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        assert_success(&nnbf(&[&["gen-data"], FAST].concat(), dir.path()));
        assert_success(&nnbf(
            &[&["train", "--epochs", "2"], FAST].concat(),
            dir.path(),
        ));
    }
    let ck_a = std::fs::read(dir_a.path().join("out/checkpoint.nnbw")).unwrap();
    let ck_b = std::fs::read(dir_b.path().join("out/checkpoint.nnbw")).unwrap();
    assert_eq!(ck_a, ck_b);

    let strip_timing = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| {
                l.rsplit_once(',')
                    .map(|(head, _)| head.to_string())
                    .unwrap()
            })
            .collect()
    };
    assert_eq!(
        strip_timing(&dir_a.path().join("out/history.csv")),
        strip_timing(&dir_b.path().join("out/history.csv"))
    );
}
