use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const DIRAC: &str = r#"{
  "domain": "unit_square",
  "mesh": {"mode": "uniform", "n": 4},
  "weight": {"kind": "radial", "z": [0.5, 0.5], "alpha": 1.5},
  "forcing": {"kind": "dirac", "z": [0.5, 0.5], "F": [1.0, 0.0]},
  "nu": {"smallness": {"target": 0.08}},
  "estimators": {"c42_restarts": 2, "sinv_iters": 15}
}"#;

fn write_spec(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Runs from the filesystem root so relative-output handling is exercised.
fn wns(args: &[&str], spec: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wns"))
        .args(args)
        .arg(spec)
        .current_dir("/")
        .output()
        .unwrap()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn zero_forcing_gives_zero_solution() {
    let dir = TempDir::new().unwrap();
    let text = DIRAC.replace(
        r#"{"kind": "dirac", "z": [0.5, 0.5], "F": [1.0, 0.0]}"#,
        r#"{"kind": "analytic", "expr": "zero"}"#,
    );
    let text = text.replace(r#"{"smallness": {"target": 0.08}}"#, "1.0");
    let spec = write_spec(&dir, "zero.json", &text);
    let out = wns(&["solve"], &spec);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let solution = read_json(dir.path().join("solution.json"));
    let velocity = solution["field"]["velocity"].as_array().unwrap();
    assert!(velocity.iter().all(|v| v.as_f64() == Some(0.0)));
    let trace = read_json(dir.path().join("trace.json"));
    assert_eq!(trace["trace"]["converged"], Value::Bool(true));
    let constants = read_json(dir.path().join("constants.json"));
    assert_eq!(
        constants["constants"]["report"]["f_dual_norm"].as_f64(),
        Some(0.0)
    );
}

#[test]
fn artifacts_carry_spec_checksum_and_seed() {
    let dir = TempDir::new().unwrap();
    let text = DIRAC.replace(
        "\"estimators\"",
        "\"outputs\": {\"solution\": \"out/u.json\"},\n  \"estimators\"",
    );
    let spec = write_spec(&dir, "dirac.json", &text);
    let out = wns(&["--seed", "7", "solve"], &spec);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sha = hex::encode(Sha256::digest(text.as_bytes()));
    for name in ["out/u.json", "trace.json", "constants.json"] {
        let doc = read_json(dir.path().join(name));
        assert_eq!(
            doc["provenance"]["spec_sha256"].as_str(),
            Some(sha.as_str()),
            "{name}"
        );
        assert_eq!(doc["provenance"]["seed"].as_u64(), Some(7), "{name}");
    }
    let constants = read_json(dir.path().join("constants.json"));
    let eta = constants["constants"]["report"]["smallness"]
        .as_f64()
        .unwrap();
    assert!((eta - 0.08).abs() < 1e-12);
    assert_eq!(
        constants["constants"]["apriori"]["holds"],
        Value::Bool(true)
    );
}

#[test]
fn missing_weight_is_a_spec_error_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let text = DIRAC.replace(
        r#""weight": {"kind": "radial", "z": [0.5, 0.5], "alpha": 1.5},"#,
        "",
    );
    let spec = write_spec(&dir, "bad.json", &text);
    let out = wns(&["solve"], &spec);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("missing field `weight`"), "{err}");
    assert!(err.contains("bad.json:8:1"), "{err}");
    assert!(!dir.path().join("solution.json").exists());
}

#[test]
fn malformed_json_reports_line() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(
        &dir,
        "broken.json",
        "{\n  \"domain\": \"unit_square\",\n  \"mesh\": [\n}",
    );
    let out = wns(&["constants"], &spec);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("broken.json:4:"), "{}", stderr(&out));
}

#[test]
fn nonconvergence_exits_two_and_keeps_artifacts() {
    let dir = TempDir::new().unwrap();
    let text = DIRAC
        .replace("\"F\": [1.0, 0.0]", "\"F\": [500.0, 0.0]")
        .replace(r#"{"smallness": {"target": 0.08}}"#, "0.01")
        .replace(
            "\"estimators\"",
            "\"solve\": {\"max_iters\": 4},\n  \"estimators\"",
        );
    let spec = write_spec(&dir, "hard.json", &text);
    let out = wns(&["solve"], &spec);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let trace = read_json(dir.path().join("trace.json"));
    assert_eq!(trace["trace"]["converged"], Value::Bool(false));
    assert_eq!(trace["trace"]["retried"], Value::Bool(true));
    assert!(dir.path().join("solution.json").exists());
    let constants = read_json(dir.path().join("constants.json"));
    assert_eq!(
        constants["constants"]["report"]["is_small"],
        Value::Bool(false)
    );
}

#[test]
fn manufactured_convergence_csv_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let text = DIRAC
        .replace("\"n\": 4", "\"n\": 2")
        .replace(
            r#"{"kind": "dirac", "z": [0.5, 0.5], "F": [1.0, 0.0]}"#,
            r#"{"kind": "analytic", "expr": "manufactured:stream_function"}"#,
        )
        .replace(r#"{"smallness": {"target": 0.08}}"#, "1.0");
    let spec = write_spec(&dir, "mms.json", &text);
    let out = wns(&["convergence", "--levels", "3"], &spec);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv_path = dir.path().join("convergence.csv");
    let first = std::fs::read(&csv_path).unwrap();
    let text_csv = String::from_utf8(first.clone()).unwrap();
    let lines: Vec<&str> = text_csv.lines().collect();
    assert!(lines[0].starts_with("# spec_sha256=") && lines[0].ends_with("seed=0"));
    assert_eq!(lines[1], "h,dofs,err_u_H1w,rate_u,err_p_L2w,rate_p");
    assert_eq!(lines.len(), 2 + 3);
    assert!(lines[2].ends_with(",NA"));
    let report = read_json(dir.path().join("convergence.json"));
    assert_eq!(
        report["report"]["reference"]
            .as_str()
            .map(|s| s.contains("exact")),
        Some(true)
    );

    let out = wns(&["convergence", "--levels", "3"], &spec);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&csv_path).unwrap(), first);
}

#[test]
fn dirac_convergence_errors_decrease() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(&dir, "dirac.json", DIRAC);
    let out = wns(&["convergence", "--levels", "3"], &spec);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let errors: Vec<f64> = csv
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errors.len(), 3);
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn too_few_levels_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(&dir, "dirac.json", DIRAC);
    let out = wns(&["convergence", "--levels", "2"], &spec);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("at least 3 levels"),
        "{}",
        stderr(&out)
    );
}

fn weights_report(alpha_literal: &str) -> (i32, Option<Value>) {
    let dir = TempDir::new().unwrap();
    let text = DIRAC.replace(
        r#"{"kind": "radial", "z": [0.5, 0.5], "alpha": 1.5}"#,
        alpha_literal,
    );
    let spec = write_spec(&dir, "w.json", &text);
    let out = wns(&["weights"], &spec);
    let path = dir.path().join("weights.json");
    (code(&out), path.exists().then(|| read_json(path)))
}

#[test]
fn constant_weight_is_in_every_class() {
    let (status, report) = weights_report(r#"{"kind": "constant", "c": 3.0}"#);
    assert_eq!(status, 0);
    let w = &report.unwrap()["weights"];
    for flag in ["in_a2", "in_a1", "inverse_in_a1"] {
        assert_eq!(w["classification"][flag], Value::Bool(true), "{flag}");
    }
    let scan = w["a2_scan"].as_array().unwrap();
    assert_eq!(scan.len(), 5);
    assert_eq!(scan[0]["depth"].as_u64(), Some(3));
    for row in scan {
        assert!((row["a2_estimate"].as_f64().unwrap() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn weight_exponent_classification() {
    let (status, report) = weights_report(r#"{"kind": "radial", "z": [0.5, 0.5], "alpha": 1.5}"#);
    assert_eq!(status, 0);
    let w = &report.unwrap()["weights"];
    assert_eq!(w["classification"]["inverse_in_a1"], Value::Bool(true));
    assert_eq!(w["classification"]["in_a1"], Value::Bool(false));
    let scan: Vec<f64> = w["a2_scan"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["a2_estimate"].as_f64().unwrap())
        .collect();
    assert!(scan.windows(2).all(|s| s[1] >= s[0]));

    let (status, report) = weights_report(r#"{"kind": "radial", "z": [0.5, 0.5], "alpha": 2.5}"#);
    assert_eq!(status, 1);
    assert!(report.is_none());
}
