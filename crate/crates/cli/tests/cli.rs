//! End-to-end runs of the `heatsc` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"))
}

fn heatsc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatsc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("HEATSC_THREADS", "2")
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn free_circle_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("circle_cosine");
    let out = heatsc(
        &[
            "oracle",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            r#"potential={"rank":1,"kind":"constant","data":{"matrix":0}}"#,
            "--selfcheck",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("report.json"));
    let ev: Vec<f64> = report["eigenvalues"].as_array().unwrap()[..7]
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(ev, vec![0.0, 1.0, 1.0, 4.0, 4.0, 9.0, 9.0]);
    let csv = std::fs::read_to_string(dir.path().join("eigenvalues.csv")).unwrap();
    assert!(csv.starts_with("index,eigenvalue\n0,0\n1,1\n"));
}

#[test]
fn galerkin_selfcheck_converges() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("circle_cosine");
    let out = heatsc(&["oracle", "--config", cfg.to_str().unwrap(), "--selfcheck"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&dir.path().join("report.json"));
    assert!(report["selfcheck"]["max_difference"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn constant_shift_moves_the_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("torus_constant");
    let out = heatsc(&["oracle", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let ev = read_json(&dir.path().join("report.json"))["eigenvalues"][0].as_f64().unwrap();
    assert!((ev - 0.7).abs() < 1e-15);
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("circle_cosine");
    let out = heatsc(&["partition", "--config", cfg.to_str().unwrap(), "--set", "t=-1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = heatsc(&["partition", "--config", "/nonexistent.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = heatsc(&["partition"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn truncated_oracle_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("torus_constant");
    let out = heatsc(
        &["partition", "--config", cfg.to_str().unwrap(), "--set", "oracle.cutoff=4"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bound_outputs_and_reruns_are_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = config("sphere_free");
    for dir in [&a, &b] {
        let out = heatsc(&["bound", "--config", cfg.to_str().unwrap()], dir.path());
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["report.json", "bound.csv", "constants_grid.csv"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
    let report = read_json(&a.path().join("report.json"));
    assert_eq!(report["all_hold"], true);
    let csv = std::fs::read_to_string(a.path().join("bound.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
}

#[test]
fn partition_report_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("torus_constant");
    let out = heatsc(&["partition", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let r = read_json(&dir.path().join("report.json"));
    for key in ["t", "rows", "fit", "constants"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    let row = &r["rows"][0];
    for key in ["hbar", "zq", "zc", "ratio", "bound"] {
        assert!(row.get(key).is_some(), "missing row field {key}");
    }
    // a_0 = vol e^{-t v0}, a_1 = 0 for a constant scalar potential
    let a = r["fit"]["a"].as_array().unwrap();
    let vol = 4.0 * std::f64::consts::PI.powi(2);
    assert!((a[0].as_f64().unwrap() - vol * (-0.7f64).exp()).abs() < 1e-8 * vol);
    assert!(a[1].as_f64().unwrap().abs() < 1e-6);
    let csv = std::fs::read_to_string(dir.path().join("partition.csv")).unwrap();
    assert!(csv.starts_with("hbar,zq,zc,ratio,bound\n"));
}

#[test]
fn expand_on_flat_constant_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("torus_constant");
    let out = heatsc(&["expand", "--config", cfg.to_str().unwrap(), "--set", "parametrix.N=2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let r = read_json(&dir.path().join("report.json"));
    assert!(r["fit"]["slope"].is_null());
    assert_eq!(r["seed"], 7);
    assert!(r["fit"]["error"].as_array().unwrap().iter().all(|e| e.as_f64().unwrap() < 1e-10));
}
