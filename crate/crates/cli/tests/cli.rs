use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfg_cli::config::parse_config;
use serde_json::{json, Value};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn well(center: f64) -> Value {
    json!({"form": "single-well", "wells": [{"center": [center], "exponent": 2.0, "coefficient": 1.0}]})
}

fn config(experiment: &str, grid: (f64, usize), couplings: Option<Value>) -> Value {
    let mut v = json!({
        "experiment": experiment,
        "grid": {"dim": 1, "half_width": grid.0, "cells": grid.1},
        "reference_grid": {"dim": 1, "half_width": 12.0, "cells": 512},
        "hamiltonian": {"gamma": 2.0, "c_h": 1.0},
        "potentials": [well(0.0), well(0.0)],
        "output_dir": "unused",
        "seed": 0
    });
    if let Some(c) = couplings {
        v["couplings"] = c;
    }
    v
}

struct Run {
    out: PathBuf,
    output: Output,
}

impl Run {
    fn code(&self) -> i32 {
        self.output.status.code().unwrap_or(-1)
    }

    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.output.stderr).into_owned()
    }

    fn manifest(&self) -> Value {
        serde_json::from_str(&fs::read_to_string(self.out.join("manifest.json")).unwrap()).unwrap()
    }
}

fn mfg(dir: &Path, name: &str, command: &str, cfg: &Value, extra: &[&str]) -> Run {
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    mfg_file(dir, name, command, &path, extra)
}

fn mfg_file(dir: &Path, name: &str, command: &str, path: &Path, extra: &[&str]) -> Run {
    let out = dir.join(format!("out-{name}"));
    let output = Command::new(env!("CARGO_BIN_EXE_mfg"))
        .arg(command)
        .arg("--config")
        .arg(path)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .env("MFG_CACHE_DIR", dir.join("cache"))
        .output()
        .unwrap();
    Run { out, output }
}

fn point(alpha1: f64, alpha2: f64, beta: f64) -> Value {
    json!({"kind": "point", "units": "a-star", "alpha1": alpha1, "alpha2": alpha2, "beta": beta})
}

#[test]
fn shipped_configs_validate() {
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = fs::read_to_string(&path).unwrap();
            let cfg = parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert_eq!(seen, 6);
}

#[test]
fn solve_reuses_cached_reference() {
    let dir = tempfile::tempdir().unwrap();
    let reference = config("reference", (12.0, 512), None);
    let first = mfg(dir.path(), "reference", "reference", &reference, &[]);
    assert_eq!(first.code(), 0, "{}", first.stderr());
    assert_eq!(first.manifest()["reference_cache_hit"], json!(false));

    let solve = config("solve", (4.0, 128), Some(point(0.5, 0.3, 0.2)));
    let second = mfg(dir.path(), "solve", "solve", &solve, &[]);
    assert_eq!(second.code(), 0, "{}", second.stderr());
    let manifest = second.manifest();
    assert_eq!(manifest["reference_cache_hit"], json!(true));
    assert_eq!(manifest["reference_cache_key"], first.manifest()["reference_cache_key"]);
    let listed: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    for name in ["solve.csv", "m1.field", "m2.field", "w1.field", "w2.field", "report.txt"] {
        assert!(listed.contains(&name), "{name} missing from manifest");
    }
    let report = fs::read_to_string(second.out.join("report.txt")).unwrap();
    assert!(report.contains("PASS cross_validation"), "{report}");
}

#[test]
fn single_thread_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let solve = config("solve", (4.0, 128), Some(point(0.6, 0.4, -0.1)));
    let a = mfg(dir.path(), "a", "solve", &solve, &["--threads", "1", "--seed", "7"]);
    let b = mfg(dir.path(), "b", "solve", &solve, &["--threads", "1", "--seed", "7"]);
    assert_eq!(a.code(), 0, "{}", a.stderr());
    assert_eq!(b.code(), 0, "{}", b.stderr());
    assert_eq!(a.manifest()["seed"], json!(7));
    for name in ["solve.csv", "m1.field", "m2.field", "w1.field", "w2.field"] {
        assert_eq!(fs::read(a.out.join(name)).unwrap(), fs::read(b.out.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn invalid_configs_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();

    let bad_cells = config("solve", (4.0, 100), Some(point(0.5, 0.5, 0.0)));
    let r = mfg(dir.path(), "cells", "solve", &bad_cells, &[]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("power of two"), "{}", r.stderr());

    let mut unknown = config("solve", (4.0, 128), Some(point(0.5, 0.5, 0.0)));
    unknown["solver"] = json!({"tolerance_typo": 1e-6});
    let r = mfg(dir.path(), "unknown", "solve", &unknown, &[]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("tolerance_typo"), "{}", r.stderr());

    let wrong_kind = config("solve", (4.0, 128), Some(json!({"kind": "grid", "units": "a-star", "alpha": [0.5], "beta": [0.0]})));
    let r = mfg(dir.path(), "kind", "solve", &wrong_kind, &[]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("kind 'point'"), "{}", r.stderr());

    let solve = config("solve", (4.0, 128), Some(point(0.5, 0.5, 0.0)));
    let r = mfg(dir.path(), "mismatch", "phase-diagram", &solve, &[]);
    assert_eq!(r.code(), 2);

    let path = dir.path().join("broken.json");
    fs::write(&path, "{\n  \"experiment\": \"solve\",\n  \"grid\": \n}").unwrap();
    let r = mfg_file(dir.path(), "broken", "solve", &path, &[]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("line 4"), "{}", r.stderr());
}

#[test]
fn attractive_sweep_writes_decreasing_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = json!({
        "kind": "attractive-sweep",
        "units": "a-star",
        "beta": 0.3,
        "deltas": [0.025, 0.1, 0.05, 0.2],
        "asymmetry": 0.5
    });
    let cfg = config("sweep-attractive", (4.0, 256), Some(sweep));
    let r = mfg(dir.path(), "sweep", "sweep-attractive", &cfg, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let mut reader = csv::Reader::from_path(r.out.join("blowup_attractive.csv")).unwrap();
    assert_eq!(reader.headers().unwrap().get(0), Some("delta"));
    let deltas: Vec<f64> = reader.records().map(|row| row.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(deltas.len(), 4);
    assert!(deltas.windows(2).all(|w| w[0] > w[1]), "{deltas:?}");
    // 0.9 decades is too short for a rate fit
    let report = fs::read_to_string(r.out.join("report.txt")).unwrap();
    assert!(report.contains("SKIP rate: "), "{report}");
    assert!(r.out.join("blowup_attractive.gp").exists());
}

#[test]
fn validate_passes_on_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let r = mfg_file(dir.path(), "validate", "validate", &configs_dir().join("validate.json"), &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let report = String::from_utf8_lossy(&r.output.stdout).into_owned();
    for name in ["gn_inequality", "adjointness", "projection_idempotent", "pohozaev"] {
        assert!(report.contains(&format!("PASS {name}")), "{report}");
    }
}
