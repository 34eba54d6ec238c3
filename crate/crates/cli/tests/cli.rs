use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bulkedge_cli::manifest::sha256_hex;
use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_bulkedge");

fn small_gyro() -> Value {
    json!({
        "family": "gyro_rods",
        "params": {"a_bg": 1.0, "a_rod": -0.9, "gamma0": 0.095, "r0": 0.3, "w": 0.1},
        "n": 6,
        "n_kappa": 8,
        "n_bands": 4,
        "n_filled": 2,
        "l_list": [1.5, 2.0],
        "hs": {"l": 1.5, "n": 6, "matrix_dim": 20},
        "decay": {"cells": 8},
        "seed": 3
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.in.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--workers", "1"])
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn schema_is_json() {
    let out = Command::new(BIN).arg("schema").output().unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["properties"]["family"]["enum"], json!(["identity", "gyro_rods"]));
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = Command::new(BIN).arg("bands").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_configs_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_gyro();
    cfg["l_list"] = json!([6.0, 4.0]);
    cfg["margin"] = json!(0.9);
    let out = run(&["bec-sweep"], &write_config(tmp.path(), &cfg), &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ascending") && err.contains("margin"), "{err}");

    let mut cfg = small_gyro();
    cfg["colour"] = json!("red");
    let out = run(&["bands"], &write_config(tmp.path(), &cfg), &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn closed_gap_exits_with_three_and_keeps_the_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({"family": "identity", "n": 6, "n_kappa": 8, "n_bands": 3, "n_filled": 1});
    let out_dir = tmp.path().join("o");
    let out = run(&["chern"], &write_config(tmp.path(), &cfg), &out_dir);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no spectral gap"));
    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["stages"][0]["status"], "failed");
}

#[test]
fn manifest_hashes_match_the_files() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("o");
    let out = run(&["bands"], &write_config(tmp.path(), &small_gyro()), &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&out_dir.join("manifest.json"));
    let files = manifest["files"].as_array().unwrap();
    let names: Vec<&str> = files.iter().map(|f| f["path"].as_str().unwrap()).collect();
    for want in ["config.json", "bands.csv", "bands_path.csv", "bands.svg", "gaps.json"] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
    for f in files {
        let bytes = fs::read(out_dir.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"], json!(bytes.len()));
        assert_eq!(f["sha256"].as_str().unwrap(), sha256_hex(&bytes));
    }
    let gaps = read_json(&out_dir.join("gaps.json"));
    assert_eq!(gaps["selected"]["n_filled"], 2);
}

#[test]
fn every_command_runs_on_a_small_problem() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_gyro());
    let cases: [(&[&str], &[&str]); 5] = [
        (&["chern"], &["chern.json", "chern_flux.svg", "chern_curvature.svg"]),
        (&["edge-index", "--l", "2"], &["edge_index.json", "edge_modes.csv"]),
        (&["bec-sweep"], &["bec.csv", "bec.svg", "bec_summary.json"]),
        (&["hs-check"], &["hs_check.json"]),
        (&["green-decay"], &["decay.csv", "decay_fits.json", "decay.svg"]),
    ];
    for (args, files) in cases {
        let out_dir = tmp.path().join(args[0]);
        let out = run(args, &cfg, &out_dir);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        for f in files {
            assert!(out_dir.join(f).is_file(), "{args:?} did not write {f}");
        }
    }
    let chern = read_json(&tmp.path().join("chern/chern.json"));
    assert_eq!(chern["fhs"]["rounded"], 1);
    let hs = read_json(&tmp.path().join("hs-check/hs_check.json"));
    assert_eq!(hs["representation"]["agree_2_percent"], true);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_gyro());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert!(run(&["hs-check"], &cfg, dir).status.success());
    }
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "manifest.json" {
            continue;
        }
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?} differs");
    }
}
