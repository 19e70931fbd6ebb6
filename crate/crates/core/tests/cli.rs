use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rll_core::io::{verify_manifest, ResultManifest};

fn rll(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rll")).args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p
}

const TRAIN: &str = r#"{
  "seed": 3,
  "data": {"source": "synthetic", "n": 60, "test_n": 30, "dims": [3, 8, 8], "classes": 3},
  "network": {"widths": [4, 4]},
  "protocol": {"kind": "train", "optimizer": {"kind": {"type": "sgd", "batch": 20}, "lr": 0.05, "epochs": 2, "seed": 0}}
}"#;

fn files_except_manifest(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn summary_prints_json() {
    let out = rll(&["algebra", "--summary", "l=2", "d=4", "n=50000", "k=188810"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["shub_smale_log2"], 100000.0);
    assert_eq!(v["solution_dim"], 138810);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(rll(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(rll(&["train"]).status.code(), Some(1));
    assert_eq!(rll(&["algebra", "--summary", "l=0", "d=1", "n=1", "k=1"]).status.code(), Some(1));
    assert_eq!(rll(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_config_names_the_path() {
    let out = rll(&["train", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("/nonexistent/cfg.json"));
}

#[test]
fn unknown_config_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"seed": 1, "bogus": 2, "protocol": {"kind": "report", "input": "."}}"#);
    let out = rll(&["report", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("bogus"));
}

#[test]
fn protocol_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TRAIN);
    let out = rll(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn locked_output_directory_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TRAIN);
    let out_dir = dir.path().join("run");
    std::fs::create_dir_all(&out_dir).unwrap();
    std::fs::write(out_dir.join(".rll.lock"), b"").unwrap();
    let out = rll(&["train", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
}

#[test]
fn corrupt_snapshot_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let snaps = dir.path().join("snaps");
    std::fs::create_dir_all(&snaps).unwrap();
    std::fs::write(snaps.join("a.rllsnap"), b"not a snapshot").unwrap();
    std::fs::write(snaps.join("b.rllsnap"), b"not a snapshot").unwrap();
    let out = rll(&["mds", "--in", snaps.to_str().unwrap(), "--out", dir.path().join("m").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
}

#[test]
fn train_is_byte_reproducible_and_feeds_mds_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TRAIN);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = rll(&["train", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    }
    let (fa, fb) = (files_except_manifest(&a), files_except_manifest(&b));
    assert!(fa.iter().any(|(p, _)| p == "curves.csv"));
    assert!(fa.iter().any(|(p, _)| p.ends_with("e000002.rllsnap")));
    assert_eq!(fa, fb);
    let (ma, mb): (ResultManifest, ResultManifest) = (
        serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap(),
        serde_json::from_slice(&std::fs::read(b.join("manifest.json")).unwrap()).unwrap(),
    );
    assert_eq!(ma.files, mb.files);
    assert_eq!(ma.config_sha256, mb.config_sha256);
    assert!(!a.join(".rll.lock").exists());

    let curves = std::fs::read_to_string(a.join("curves.csv")).unwrap();
    assert!(curves.starts_with("protocol,run,stage,epoch,split,error_pct,loss,lr\n"));
    // Three epochs (0, 1, 2) times two splits.
    assert_eq!(curves.lines().count(), 1 + 6);

    let m = dir.path().join("mds");
    let out = rll(&["mds", "--in", a.join("snapshots").to_str().unwrap(), "--layers", "2", "--out", m.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let mds = std::fs::read_to_string(m.join("mds.csv")).unwrap();
    assert!(mds.starts_with("point_id,x,y,epoch,run,stage\n"));
    assert_eq!(mds.lines().count(), 1 + 3);
    verify_manifest(&m).unwrap();

    let r = dir.path().join("report");
    let out = rll(&["report", "--in", a.to_str().unwrap(), "--out", r.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(std::fs::read_to_string(r.join("report.csv")).unwrap().lines().count(), 1 + 2);

    std::fs::write(a.join("curves.csv"), "tampered\n").unwrap();
    let out = rll(&["report", "--in", a.to_str().unwrap(), "--out", dir.path().join("r2").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("curves.csv"));
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TRAIN);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    rll(&["train", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    rll(&["train", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "4"]);
    assert_ne!(
        std::fs::read(a.join("curves.csv")).unwrap(),
        std::fs::read(b.join("curves.csv")).unwrap()
    );
}

#[test]
fn algebra_config_writes_systems() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"seed": 0, "protocol": {"kind": "algebra",
            "summary": {"l": 2, "d": 2, "n": 3, "k": 10},
            "system": {"net": "single-unit", "activation": [0, 0, 1], "data": [[[1.0], 1.0]]}}}"#,
    );
    let out_dir = dir.path().join("alg");
    let out = rll(&["algebra", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let zero: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("zero_system.json")).unwrap()).unwrap();
    // (w x)^2 = 1 at x = 1 has the two roots w = -1 and w = 1.
    assert_eq!(zero["zeros"]["zeros"].as_array().unwrap().len(), 2);
    assert!(out_dir.join("summary.json").exists());
    assert!(out_dir.join("critical_system.json").exists());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        let cfg = rll_core::config::ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(p.file_stem().unwrap().to_string_lossy().starts_with(cfg.protocol.name()) || cfg.protocol.name() == "train");
        n += 1;
    }
    assert!(n >= 7);
}
