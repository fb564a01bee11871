use std::path::Path;
use std::process::Command;

use rbmflow::io;
use rbmflow::pipeline::{snapshot, sweep_minimum};

const DESK: &str = r#"
seed = 5
output_dir = "unused"

[dataset]
sides = [4]
n_temps = [20, 30, 40]
n_conf = 20
sweeps = 20

[train]
epochs = 5

[sweep]
n_hidden = "squares"

[flow]
max_iters = 8

[spectral]
null_draws = 500

[fit]
cutoff = 0.0
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rbmflow"));
    c.env_remove("RBMFLOW_WORKERS");
    c
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn pipeline_emits_every_artifact_class_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DESK);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (out, workers) in [(&a, "1"), (&b, "2")] {
        let status = bin()
            .args(["pipeline", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .args(["--workers", workers])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let sa = snapshot(&a).unwrap();
    let sb = snapshot(&b).unwrap();
    assert_eq!(
        sa.iter().map(|x| &x.0).collect::<Vec<_>>(),
        sb.iter().map(|x| &x.0).collect::<Vec<_>>()
    );
    for (x, y) in sa.iter().zip(&sb) {
        assert!(x.1 == y.1, "{} differs between runs", x.0);
    }

    let names: Vec<&str> = sa.iter().map(|x| x.0.as_str()).collect();
    for prefix in [
        "dataset_L4_N20.irbm",
        "calibration_L4_N30.csv",
        "model_L4_N40_H16.rbmw",
        "train_L4_N20_H1.csv",
        "trajectory_L4_N20_H4.csv",
        "sweep_L4_N30.csv",
        "spectral_L4_N20_H9.csv",
        "eigvec_L4_N20_H9_k09.pgm",
        "fit_points_L4.csv",
        "fit_L4.csv",
        "summary.md",
        "manifest.json",
    ] {
        assert!(names.contains(&prefix), "missing {prefix}");
    }
    // One image per eigenvector of the N_h-dimensional column space.
    assert!(!names.contains(&"eigvec_L4_N20_H9_k10.pgm"));

    let data = io::decode_dataset(&std::fs::read(a.join("dataset_L4_N30.irbm")).unwrap()).unwrap();
    assert_eq!((data.side(), data.n_temp(), data.n_conf()), (4, 30, 20));

    let rows = io::read_sweep_csv(&std::fs::read(a.join("sweep_L4_N30.csv")).unwrap()).unwrap();
    let (h, e) = sweep_minimum(&rows).unwrap();
    let summary = std::fs::read_to_string(a.join("summary.md")).unwrap();
    assert!(summary.contains(&format!("| 4 | 30 | {h} | {e:.4} |")), "{summary}");

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["dataset_format_version"], 1);
    assert_eq!(manifest["root_seed"], 5);
    assert!(manifest["artifacts"]["summary.md"].as_u64().unwrap() > 0);
}

#[test]
fn stages_compose_to_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DESK);
    let whole = tmp.path().join("whole");
    let staged = tmp.path().join("staged");
    assert!(bin()
        .args(["pipeline", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&whole)
        .status()
        .unwrap()
        .success());
    for stage in ["generate", "calibrate", "train", "flow", "spectra", "fit", "report"] {
        let out = bin()
            .args([stage, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&staged)
            .output()
            .unwrap();
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let a = snapshot(&whole).unwrap();
    let b = snapshot(&staged).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.0, y.0);
        assert!(x.1 == y.1, "{} differs", x.0);
    }
}

#[test]
fn seed_override_changes_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DESK);
    let mut files = Vec::new();
    for seed in ["1", "2"] {
        let out = tmp.path().join(seed);
        assert!(bin()
            .args(["generate", "--config"])
            .arg(&cfg)
            .args(["--seed", seed, "--out"])
            .arg(&out)
            .status()
            .unwrap()
            .success());
        files.push(std::fs::read(out.join("dataset_L4_N20.irbm")).unwrap());
    }
    assert_ne!(files[0], files[1]);
}

#[test]
fn errors_are_machine_readable() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "[dataset]\nsides = []\n");
    let out = bin().args(["generate", "--config"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
    let line: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(line["error"], "config");

    let missing = bin()
        .args(["generate", "--config"])
        .arg(tmp.path().join("nope.toml"))
        .output()
        .unwrap();
    assert!(!missing.status.success());
    let line: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&missing.stderr).trim()).unwrap();
    assert_eq!(line["error"], "io");

    // Flow before anything was generated.
    let cfg = write_config(tmp.path(), DESK);
    let out = bin()
        .args(["flow", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("empty"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"error\":\"io\""));
}

#[test]
fn unwritable_output_leaves_no_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DESK);
    // A regular file where the output directory should be.
    let blocker = tmp.path().join("blocked");
    std::fs::write(&blocker, b"x").unwrap();
    let out = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(blocker.join("sub"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!blocker.join("sub").join("manifest.json").exists());
}

#[test]
fn zero_workers_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DESK);
    let out = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .args(["--workers", "0"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
