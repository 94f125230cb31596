use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

// shallow lattice: band structures here take milliseconds
const SHALLOW: &str = r#"
[lattice]
theta_rad = 1.5707963267948966
depth_plus_Er = 25.7
weights = { s0 = [0.0, 1.0], s1 = [1.0, 0.0] }

[solver]
quasimomenta = 8
bands = 3
"#;

fn mwlattice(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mwlattice")).current_dir(dir).args(args).output().expect("binary runs")
}

fn config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn sweep_config(command: &str, path: &str, start: f64, stop: f64, steps: usize) -> String {
    format!("{SHALLOW}\n[sweep]\npath = \"{path}\"\nstart = {start}\nstop = {stop}\nsteps = {steps}\ncommand = \"{command}\"\n")
}

#[test]
fn unknown_key_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.toml", "[lattice]\ndepht_plus_Er = 10.0\n");
    let out = mwlattice(tmp.path(), &["transitions", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["exit_code"], 2);
    assert!(e["message"].as_str().unwrap().contains("depht_plus_Er"), "{e}");
    assert!(!tmp.path().join("out").join("manifest.json").exists());
}

#[test]
fn mutually_exclusive_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.toml", "[lattice]\ntheta_rad = 0.3\ndisplacement_nm = 20.0\n");
    assert_eq!(mwlattice(tmp.path(), &["transitions", "--config", &cfg]).status.code(), Some(2));
    let cfg = config(tmp.path(), "d.toml", "[ensemble]\nnbar = 0.1\nT_uK = 5.0\n");
    assert_eq!(mwlattice(tmp.path(), &["cool", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn unknown_preset_and_missing_input() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mwlattice(tmp.path(), &["walk", "--preset", "fig9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("fig5b"));
    assert_eq!(mwlattice(tmp.path(), &["thermometry", "--preset", "fig2b"]).status.code(), Some(2));
    assert_eq!(mwlattice(tmp.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn help_exits_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mwlattice(tmp.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sweep"));
}

#[test]
fn field_outside_the_linear_zeeman_regime_is_numerical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.toml", &format!("{SHALLOW}\n[field]\nB_gauss = 20.0\n"));
    let out = mwlattice(tmp.path(), &["transitions", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["exit_code"], 3);
}

#[test]
fn failed_sweep_points_are_marked_and_the_rest_kept() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.toml", &sweep_config("transitions", "field.B_gauss", 0.0, 20.0, 3));
    let out = mwlattice(tmp.path(), &["sweep", "--config", &cfg, "--out", "s"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = rows(&tmp.path().join("s/sweep.csv"));
    let status = header.iter().position(|h| h == "status").unwrap();
    let message = header.iter().position(|h| h == "message").unwrap();
    let failed: Vec<&Vec<String>> = rows.iter().filter(|r| r[status] == "failed").collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0][0], "2");
    assert!(!failed[0][message].is_empty());
    assert!(rows.iter().any(|r| r[status] == "ok" && r[0] == "0"));
    assert!(tmp.path().join("s/manifest.json").exists());
}

#[test]
fn sweep_rows_follow_the_grid_with_many_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.toml", &sweep_config("transitions", "lattice.depth_plus_Er", 20.0, 30.0, 6));
    let out = mwlattice(tmp.path(), &["sweep", "--config", &cfg, "--workers", "4", "--out", "s"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = rows(&tmp.path().join("s/sweep.csv"));
    assert_eq!(&header[..3], ["point", "lattice.depth_plus_Er", "status"]);
    let points: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(points.windows(2).all(|w| w[0] <= w[1]));
    for r in &rows {
        let i: f64 = r[0].parse().unwrap();
        let v: f64 = r[1].parse().unwrap();
        assert!((v - (20.0 + 2.0 * i)).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn single_point_sweep_matches_a_direct_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.toml", &sweep_config("transitions", "lattice.depth_plus_Er", 25.7, 25.7, 1));
    assert_eq!(mwlattice(tmp.path(), &["sweep", "--config", &cfg, "--out", "s"]).status.code(), Some(0));
    assert_eq!(mwlattice(tmp.path(), &["transitions", "--config", &cfg, "--out", "d"]).status.code(), Some(0));
    let (sh, srows) = rows(&tmp.path().join("s/sweep.csv"));
    let (dh, drows) = rows(&tmp.path().join("d/transitions.csv"));
    assert_eq!(sh[3..sh.len() - 1], dh[..]);
    let inner: Vec<Vec<String>> = srows.iter().map(|r| r[3..r.len() - 1].to_vec()).collect();
    assert_eq!(inner, drows);
}

#[test]
fn manifest_checksums_match_the_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.toml", SHALLOW);
    assert_eq!(mwlattice(tmp.path(), &["bandstructure", "--config", &cfg, "--out", "o"]).status.code(), Some(0));
    let dir = tmp.path().join("o");
    let m: Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "bandstructure");
    let files = m["files"].as_array().unwrap();
    assert_eq!(files.len(), 3);
    for f in files {
        let bytes = fs::read(dir.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(f["sha256"].as_str().unwrap(), hex);
    }
    let resolved = fs::read(dir.join("config.resolved.toml")).unwrap();
    let hex: String = Sha256::digest(&resolved).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(m["config_hash"].as_str().unwrap(), hex);
    assert!(!fs::read_dir(&dir).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(mwlattice(tmp.path(), &["walk", "--preset", "walk", "--seed", "9", "--out", "a"]).status.code(), Some(0));
    let resolved = tmp.path().join("a/config.resolved.toml");
    let cfg = resolved.to_str().unwrap();
    assert_eq!(mwlattice(tmp.path(), &["walk", "--config", cfg, "--out", "a"]).status.code(), Some(0));
    let again = fs::read_to_string(&resolved).unwrap();
    assert!(again.contains("seed = 9"));
    assert_eq!(mwlattice(tmp.path(), &["walk", "--config", cfg, "--out", "b"]).status.code(), Some(0));
    assert_eq!(fs::read(tmp.path().join("a/walk.csv")).unwrap(), fs::read(tmp.path().join("b/walk.csv")).unwrap());
}

#[test]
fn json_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.toml", SHALLOW);
    let out = mwlattice(tmp.path(), &["transitions", "--config", &cfg, "--format", "json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&fs::read(tmp.path().join("o/transitions.json")).unwrap()).unwrap();
    let text = v.to_string();
    for key in ["center_Hz", "width_Hz", "nprime"] {
        assert!(text.contains(key), "{key} missing: {text}");
    }
}

#[test]
fn couplings_scan_matches_requested_angles() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.toml", "[solver]\nlevels = 3\n[couplings]\nlevels = 2\n");
    let out = mwlattice(tmp.path(), &["couplings", "--config", &cfg, "--theta-scan", "0:0.2:3", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = rows(&tmp.path().join("o/couplings.csv"));
    assert_eq!(header, ["theta_rad", "delta_x_nm", "n", "nprime", "abs_M", "rabi_Hz"]);
    assert_eq!(rows.len(), 3 * 4);
    let theta0: Vec<&Vec<String>> = rows.iter().filter(|r| r[0].parse::<f64>().unwrap() == 0.0).collect();
    for r in theta0 {
        let m: f64 = r[4].parse().unwrap();
        let want = if r[2] == r[3] { 1.0 } else { 0.0 };
        assert!((m - want).abs() < 1e-6, "{r:?}");
    }
}
