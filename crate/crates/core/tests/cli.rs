//! End-to-end tests of the `mmsd` binary: flags, outputs, files, and the
//! exit-code contract (0 success, 2 usage/input error, 3 numeric failure).

use std::path::Path;
use std::process::{Command, Output};

fn mmsd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmsd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn gen_data_writes_files_and_reports_oracle() {
    let dir = tempfile::TempDir::new().unwrap();
    std::fs::write(dir.path().join("spec.txt"), "n_samples = 24\nseed = 9\n").unwrap();
    let out = mmsd(&["gen-data", "--spec", "spec.txt", "--out", "ds.bin"], dir.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("spec: n_samples=24"), "missing resolved spec: {text}");
    assert!(text.contains("labels: fluent=12 stuttered=12"));
    assert!(text.contains("separability-oracle"));
    let f1: f64 = text
        .lines()
        .find(|l| l.starts_with("separability-oracle"))
        .and_then(|l| l.split("F1 ").nth(1))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(f1 >= 99.0, "oracle F1 {f1}");
    assert!(dir.path().join("ds.bin").exists());
    assert!(dir.path().join("ds.bin.manifest.jsonl").exists());
}

#[test]
fn gen_data_rejects_empty_spec_without_writing() {
    let dir = tempfile::TempDir::new().unwrap();
    std::fs::write(dir.path().join("spec.txt"), "n_samples = 0\n").unwrap();
    let out = mmsd(&["gen-data", "--spec", "spec.txt", "--out", "ds.bin"], dir.path());
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(!dir.path().join("ds.bin").exists());
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let dir = tempfile::TempDir::new().unwrap();
    std::fs::write(dir.path().join("spec.txt"), "n_samples = 16\nseed = 4\n").unwrap();
    for name in ["a.bin", "b.bin"] {
        let out = mmsd(&["gen-data", "--spec", "spec.txt", "--out", name], dir.path());
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a.bin")).unwrap();
    let b = std::fs::read(dir.path().join("b.bin")).unwrap();
    assert_eq!(a, b, "same seed must produce identical bytes");
}

#[test]
fn unknown_flags_are_rejected() {
    let dir = tempfile::TempDir::new().unwrap();
    let out = mmsd(&["gen-data", "--out", "x.bin", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_requires_existing_data() {
    let dir = tempfile::TempDir::new().unwrap();
    let out = mmsd(&["train", "--data", "missing.bin", "--out", "m.ckpt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.bin"), "stderr: {}", stderr(&out));
}

#[test]
fn eval_requires_existing_checkpoint() {
    let dir = tempfile::TempDir::new().unwrap();
    std::fs::write(dir.path().join("spec.txt"), "n_samples = 16\n").unwrap();
    let gen = mmsd(&["gen-data", "--spec", "spec.txt", "--out", "ds.bin"], dir.path());
    assert!(gen.status.success());
    let out = mmsd(&["eval", "--data", "ds.bin", "--checkpoint", "nope.ckpt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_eval_infer_pipeline() {
    let dir = tempfile::TempDir::new().unwrap();
    std::fs::write(dir.path().join("spec.txt"), "n_samples = 32\nseed = 6\n").unwrap();
    let gen = mmsd(
        &["gen-data", "--spec", "spec.txt", "--out", "ds.bin", "--test-fraction", "0.25"],
        dir.path(),
    );
    assert!(gen.status.success(), "stderr: {}", stderr(&gen));

    // Short run: the pipeline contract matters here, not the metrics.
    std::fs::write(dir.path().join("train.txt"), "epochs = 2\nseed = 1\n").unwrap();
    let tr = mmsd(
        &["train", "--data", "ds.bin", "--config", "train.txt", "--out", "m.ckpt"],
        dir.path(),
    );
    assert!(tr.status.success(), "stderr: {}", stderr(&tr));
    let text = stdout(&tr);
    assert!(text.contains("model:"), "resolved config missing: {text}");
    assert!(text.contains("train: peak_lr=0.0003"));
    assert!(text.contains("training on 24 samples"));
    assert!(dir.path().join("m.ckpt").exists());
    assert!(dir.path().join("m.ckpt.config").exists());

    // Log accounting: 24 samples -> 6 micro-batches -> 2 steps/epoch.
    let log = std::fs::read_to_string(dir.path().join("m.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2 * 2 + 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("epoch").is_some());
    }

    let ev = mmsd(&["eval", "--data", "ds.bin", "--checkpoint", "m.ckpt"], dir.path());
    assert!(ev.status.success(), "stderr: {}", stderr(&ev));
    let text = stdout(&ev);
    let metric_line = text.lines().last().unwrap();
    assert!(
        metric_line.starts_with("P ") && metric_line.contains("  R ") && metric_line.contains("  F1 "),
        "metric line format: {metric_line}"
    );

    let inf = mmsd(&["infer", "--checkpoint", "m.ckpt", "--sample", "ds.bin:3"], dir.path());
    assert!(inf.status.success(), "stderr: {}", stderr(&inf));
    let text = stdout(&inf);
    assert!(
        text.contains("class stuttered") || text.contains("class fluent"),
        "infer output: {text}"
    );
    assert!(text.contains("probability"), "infer output: {text}");

    // Determinism: identical command, identical stdout.
    let ev2 = mmsd(&["eval", "--data", "ds.bin", "--checkpoint", "m.ckpt"], dir.path());
    assert_eq!(stdout(&ev), stdout(&ev2));
}

#[test]
fn grad_check_passes_on_toy_config() {
    let dir = tempfile::TempDir::new().unwrap();
    let out = mmsd(&["grad-check"], dir.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("PASS max_rel_err"), "output: {text}");
    assert!(text.contains("< 1e-4"));
}

#[test]
fn corrupt_dataset_exits_with_input_error() {
    let dir = tempfile::TempDir::new().unwrap();
    std::fs::write(dir.path().join("ds.bin"), b"NOTMAGIC plus junk").unwrap();
    let out = mmsd(&["train", "--data", "ds.bin", "--out", "m.ckpt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("format error"), "stderr: {}", stderr(&out));
}

#[test]
fn ablate_prints_three_variant_table() {
    let dir = tempfile::TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("spec.txt"),
        "n_samples = 24\nseed = 3\ncue_mode = correlated\n",
    )
    .unwrap();
    let gen = mmsd(&["gen-data", "--spec", "spec.txt", "--out", "ds.bin"], dir.path());
    assert!(gen.status.success(), "stderr: {}", stderr(&gen));

    std::fs::write(dir.path().join("train.txt"), "epochs = 1\n").unwrap();
    let out = mmsd(
        &["ablate", "--data", "ds.bin", "--config", "train.txt"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    for variant in ["audio-only", "video-only", "full"] {
        assert!(text.contains(variant), "missing {variant} row: {text}");
    }
    assert!(text.contains("variant"), "missing header: {text}");
}
