use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lec")).args(args).output().expect("spawn lec")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

fn write_single(dir: &Path, rows: &[(f64, u8)]) -> String {
    let path = dir.join("data.csv");
    let mut text = String::from("id,uncertainty,error\n");
    for (i, (u, e)) in rows.iter().enumerate() {
        text.push_str(&format!("r{i},{u},{e}\n"));
    }
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn calibrate_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<(f64, u8)> = (0..40).map(|i| (i as f64 / 40.0, u8::from(i >= 36))).collect();
    let input = write_single(dir.path(), &rows);
    let out_dir = dir.path().join("cal");
    let out = lec(&["calibrate", "--input", &input, "--alpha", "0.1", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let saved: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(saved, stdout_json(&out));
    assert_eq!(saved["command"], "calibrate");
    assert_eq!(saved["decision"]["status"], "feasible");
    assert_eq!(saved["n_records"], 40);
    // 36 correct + errors e: e - 0.1 k <= -1 allows e = 2 (k = 38, margin -1.8), not 3 (k = 39, -0.9)
    assert_eq!(saved["decision"]["accepted_on_cal"], 38);
    assert_eq!(saved["decision"]["thresholds"][0].as_f64().unwrap(), 37.0 / 40.0);
}

#[test]
fn infeasible_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<(f64, u8)> = (0..20).map(|i| (i as f64, 1)).collect();
    let input = write_single(dir.path(), &rows);
    let out = lec(&["calibrate", "--input", &input, "--alpha", "0.01"]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["decision"]["status"], "infeasible");
}

#[test]
fn gate_applies_saved_decision() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<(f64, u8)> = (0..40).map(|i| (i as f64 / 40.0, u8::from(i >= 36))).collect();
    let input = write_single(dir.path(), &rows);
    let cal = dir.path().join("cal");
    let gated = dir.path().join("gated");
    assert!(lec(&["calibrate", "--input", &input, "--alpha", "0.1", "--out", cal.to_str().unwrap()])
        .status
        .success());
    let decision = cal.join("summary.json");
    let out = lec(&[
        "gate",
        "--input",
        &input,
        "--decision",
        decision.to_str().unwrap(),
        "--out",
        gated.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = stdout_json(&out);
    assert_eq!(s["accepted"], 38);
    assert_eq!(s["accepted_errors"], 2);
    let csv = fs::read_to_string(gated.join("gated.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);
    assert_eq!(csv.lines().filter(|l| l.contains(",abstain,")).count(), 2);
}

#[test]
fn simulate_is_deterministic() {
    let args = ["simulate", "--alpha", "0.1", "--n-cal", "200", "--replications", "1000", "--seed", "7"];
    let a = lec(&args);
    let b = lec(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v = stdout_json(&a);
    assert_eq!(v["report"]["replications"], 1000);

    let c = lec(&["simulate", "--alpha", "0.1", "--n-cal", "200", "--replications", "1000", "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn generate_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let gen_dir = dir.path().join("gen");
    let out = lec(&[
        "simulate",
        "--theorem",
        "t2",
        "--rho",
        "0.5",
        "--generate",
        "300",
        "--seed",
        "3",
        "--out",
        gen_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data = gen_dir.join("synthetic.csv");
    let report = dir.path().join("report");
    let out = lec(&[
        "compare",
        "--input",
        data.to_str().unwrap(),
        "--methods",
        "coin-cp,lec-route",
        "--alphas",
        "0.1,0.2",
        "--splits",
        "10",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["rows"].as_array().unwrap().len(), 6);
    let per_split = fs::read_to_string(report.join("per_split.csv")).unwrap();
    assert_eq!(per_split.lines().count(), 1 + 6 * 10);
    assert!(report.join("curves.csv").exists());
    let summary: Value = serde_json::from_str(&fs::read_to_string(report.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"], v["rows"]);
}

#[test]
fn alpha_flags_conflict() {
    let out = lec(&["evaluate", "--input", "x.csv", "--alpha", "0.1", "--alphas", "0.2"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
}

#[test]
fn malformed_input_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "id,uncertainty,error\na,0.1,0\nb,oops,1\n").unwrap();
    let out = lec(&["calibrate", "--input", path.to_str().unwrap(), "--alpha", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert!(err["error"]["message"].as_str().unwrap().contains("line 3"), "{err}");
}

#[test]
fn invalid_alpha_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_single(dir.path(), &[(0.1, 0)]);
    let out = lec(&["calibrate", "--input", &input, "--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["error"]["kind"].is_string());
}

#[test]
fn min_alpha_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    // 9 correct then 1 error: smallest alpha with e - alpha k <= -1 over prefixes is 1/9
    let mut rows: Vec<(f64, u8)> = (0..9).map(|i| (i as f64, 0)).collect();
    rows.push((9.0, 1));
    let input = write_single(dir.path(), &rows);
    let out = lec(&["min-alpha", "--input", &input]);
    assert!(out.status.success());
    let a = stdout_json(&out)["min_feasible_alpha"].as_f64().unwrap();
    assert!((a - 1.0 / 9.0).abs() < 1e-12, "{a}");
}
