use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "model": {"d_model": 16, "n_heads": 2, "n_layers": 1, "prefix_len": 2},
  "data": {"corpus_size": 24, "eval_size": 6},
  "optim": {"steps": 4, "batch_size": 4, "lr": 0.003},
  "eval_every": 2
}"#;

fn cal(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    Command::new(env!("CARGO_BIN_EXE_cal"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn train_then_inspect_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = cal(dir.path(), &["train"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    for f in [
        "metrics.csv",
        "timing.csv",
        "manifest.json",
        "config.json",
        "checkpoint.bin",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(
        std::fs::read_to_string(out.join("metrics.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    for cmd in [&["eval"][..], &["heatmap", "--sample", "1"], &["histogram"]] {
        let o = cal(dir.path(), cmd);
        assert!(
            o.status.success(),
            "{cmd:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert!(out.join("heatmap_1.json").exists());
    assert!(out.join("histogram.csv").exists());

    let again = tempfile::tempdir().unwrap();
    assert!(cal(again.path(), &["train"]).status.success());
    assert_eq!(
        std::fs::read(out.join("metrics.csv")).unwrap(),
        std::fs::read(again.path().join("out/metrics.csv")).unwrap()
    );
}

#[test]
fn gen_data_writes_versioned_lines() {
    let dir = tempfile::tempdir().unwrap();
    let o = cal(dir.path(), &["gen-data", "--set", "data.swap_ratio=0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/train.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 24);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["version"], 1);
    let swapped = text
        .lines()
        .filter(|l| l.contains("\"corrupted\":true"))
        .count();
    assert_eq!(swapped, 12);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        &["train", "--set", "optim.lrr=1"][..],
        &["train", "--set", "cal.alpha=-1"],
        &["train", "--set", "cal.window=4"],
    ] {
        assert_eq!(cal(dir.path(), bad).status.code(), Some(2), "{bad:?}");
    }
    let missing = Command::new(env!("CARGO_BIN_EXE_cal"))
        .args(["train", "--config", "/nonexistent/cfg.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_three_and_dumps_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let o = cal(dir.path(), &["train", "--set", "optim.lr=1e300"]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(dir.path().join("out/diagnostics.json").exists());
}
