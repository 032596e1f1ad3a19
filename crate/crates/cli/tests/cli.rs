use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mjnn_core::io::{load_gains, load_model};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn mjnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mjnn")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Compares against `tests/golden/<name>`; `MJNN_UPDATE_GOLDEN=1` rewrites it.
fn golden(name: &str, actual: &[u8]) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("MJNN_UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from golden:\n{}", String::from_utf8_lossy(actual));
}

#[test]
fn validate_shipped_example() {
    let out = mjnn(&["validate", s(&root().join("examples/paper_sec4.json"))]);
    assert_eq!(out.status.code(), Some(0));
    golden("validate_ok.txt", &out.stdout);
}

#[test]
fn validate_row_sum_broken() {
    let out = mjnn(&["validate", s(&data("row_sum_broken.json"))]);
    assert_eq!(out.status.code(), Some(1));
    golden("validate_row_sum.txt", &out.stdout);
}

#[test]
fn missing_file_is_io_error() {
    let out = mjnn(&["validate", "/nonexistent/model.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flag_is_invalid() {
    let out = mjnn(&["simulate", s(&data("toy.json")), "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_golden_and_deterministic() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let model = root().join("examples/paper_sec4.json");
    let gains = root().join("examples/paper_sec4_gains.json");
    for d in &dirs {
        let out = mjnn(&[
            "simulate", s(&model), "--gains", s(&gains), "--seed", "7", "--runs", "4", "--horizon", "12", "--out", s(d.path()),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["trajectory.csv", "ensemble.csv", "metrics.json"] {
        let a = fs::read(dirs[0].path().join(f)).unwrap();
        assert_eq!(a, fs::read(dirs[1].path().join(f)).unwrap(), "{f}");
        golden(&format!("simulate_seed7_{f}"), &a);
    }
}

#[test]
fn simulate_needs_gains() {
    let d = tempfile::tempdir().unwrap();
    let out = mjnn(&["simulate", s(&root().join("examples/paper_sec4.json")), "--out", s(d.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn toy_synthesis_sweep_and_verify() {
    let d = tempfile::tempdir().unwrap();
    let toy = data("toy.json");
    let out = mjnn(&["sweep", s(&toy), "--gamma-bracket", "0.1", "10", "--steps", "6", "--out", s(d.path())]);
    assert_eq!(out.status.code(), Some(0));
    golden("toy_sweep_bracket.csv", &fs::read(d.path().join("bracket.csv")).unwrap());
    for f in ["gains.json", "certificate.json", "ccl_trace.csv", "config.json"] {
        assert!(d.path().join(f).exists(), "{f}");
    }
    let g = d.path().join("gains.json");
    let ok = mjnn(&["verify", s(&toy), "--gains", s(&g), "--gamma", "2", "--out", s(d.path())]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&ok.stdout), "feasible at gamma = 2\n");
    let bad = mjnn(&["verify", s(&toy), "--gamma", "1", "--out", s(d.path())]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).starts_with("infeasible at gamma = 1"));
}

#[test]
fn benchmark_bracket_synthesis_converges() {
    let d = tempfile::tempdir().unwrap();
    let model = root().join("examples/paper_sec4.json");
    let out = mjnn(&["synthesize", s(&model), "--gamma-bracket", "0.1", "10", "--out", s(d.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Converged"));
    let loaded = load_model(&model).unwrap();
    load_gains(&d.path().join("gains.json"), &loaded.model, &loaded.wtod).unwrap();
    let trace = fs::read_to_string(d.path().join("ccl_trace.csv")).unwrap();
    assert!(trace.starts_with("iter,objective,eq55_residual,max_coupling_residual\n"));
}
