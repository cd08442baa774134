use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn small_conf() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/small.conf")
}

fn wavered(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavered")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// `small.conf` with one key replaced, written next to `dir`.
fn edited(dir: &Path, key: &str, value: &str) -> PathBuf {
    let text: String = fs::read_to_string(small_conf())
        .unwrap()
        .lines()
        .map(|l| {
            if l.split('=').next().map(str::trim) == Some(key) {
                format!("{key} = {value}\n")
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    let path = dir.join("edited.conf");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn reduce_regularize_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = wavered(&[
        "--config",
        small_conf().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "reduce",
        "--stage",
        "regularize",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // The resolved configuration is echoed as JSON.
    let echoed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(echoed["wave"]["trunc"]["m"], 10);
    let reg: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("regularize.json")).unwrap()).unwrap();
    for key in ["gamma", "omega", "norm_g", "worst_divisor"] {
        assert!(reg.get(key).is_some(), "regularize.json lacks {key}");
    }
    assert!(out.join("g.json").exists() && out.join("manifest.json").exists());
    assert!(!out.join("kam.csv").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = edited(dir.path(), "tau1", "2.5");
    let o = wavered(&["--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "reduce"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tau1 > tau0 + d"), "{}", stderr(&o));

    let o = wavered(&["reduce"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"), "{}", stderr(&o));

    let o = wavered(&["--config", small_conf().to_str().unwrap(), "measure", "--sampler", "sobol"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn measure_writes_one_row_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let o = wavered(&[
        "--config",
        small_conf().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "measure",
        "--set",
        "O-gamma",
        "--gamma",
        "0.05",
        "--samples",
        "1000",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("measure.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("omega_0,member,worst_divisor,worst_margin,worst_index"));
    assert_eq!(lines.count(), 1000);
}

#[test]
fn simulate_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let o = wavered(&[
        "--config",
        small_conf().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "simulate",
        "--T",
        "2",
        "--dt",
        "0.01",
        "--r",
        "0,1",
        "--initial",
        "mode:3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("simulate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,norm_r0,norm_r1"));
    let last = lines.last().unwrap();
    assert!(last.starts_with("2e0,"), "{last}");
}

#[test]
fn resonant_frequency_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // |omega - 1| < gamma at l = 1, k = 1.
    let bad = edited(dir.path(), "omega", "1.01");
    let out = dir.path().join("out");
    let o = wavered(&["--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap(), "pipeline"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("stage regularize failed (non-admissible)"), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["error"]["stage"], "regularize");
}
