use std::process::Command;

use cylfin_cli::{run_command, Outcome, EXIT_CHECK_FAILED, EXIT_PASS, EXIT_USAGE};
use serde_json::Value;

fn run(args: &[&str]) -> Outcome {
    run_command(std::iter::once("cylfin").chain(args.iter().copied()))
}

fn json(o: &Outcome) -> Value {
    serde_json::from_str(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", o.stdout))
}

fn without_timing(o: &Outcome) -> Value {
    let mut v = json(o);
    v.as_object_mut().unwrap().remove("timing_ms");
    v
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["douglas", "--catalog", "euclidean", "--samples", "10", "--seed", "1"]).code, EXIT_PASS);
    let bad = run(&["flatness", "--phi", "sqrt(1+z^2)+0.1*s*z^2", "--samples", "20", "--seed", "1"]);
    assert_eq!(bad.code, EXIT_CHECK_FAILED);
    assert_eq!(json(&bad)["passed"], Value::Bool(false));
    assert_eq!(run(&["douglas", "--samples", "10", "--seed", "1"]).code, EXIT_USAGE);
    assert_eq!(run(&["douglas", "--catalog", "euclidean", "--samples", "10"]).code, EXIT_USAGE);
    assert_eq!(run(&["douglas", "--catalog", "nope", "--seed", "1"]).code, EXIT_USAGE);
    assert_eq!(run(&["spray", "--phi", "sqrt(1+z^2", "--seed", "1"]).code, EXIT_USAGE);
    assert_eq!(run(&["validate", "--catalog", "ex4.1", "--tol", "-1"]).code, EXIT_USAGE);
    assert_eq!(run(&["--help"]).code, EXIT_PASS);
    assert_eq!(run(&["frobnicate"]).code, EXIT_USAGE);
}

#[test]
fn reports_are_reproducible() {
    let args = ["douglas", "--catalog", "ex4.3", "--samples", "20", "--seed", "42"];
    let (a, b) = (run(&args), run(&args));
    assert_eq!(a.code, EXIT_PASS);
    assert_eq!(without_timing(&a), without_timing(&b));
    let one = run(&["douglas", "--catalog", "ex4.3", "--samples", "20", "--seed", "42", "--threads", "1"]);
    assert_eq!(without_timing(&a)["checks"], without_timing(&one)["checks"]);
    let other = run(&["douglas", "--catalog", "ex4.3", "--samples", "20", "--seed", "43"]);
    assert_ne!(without_timing(&a)["checks"], without_timing(&other)["checks"]);
}

#[test]
fn report_shape() {
    let o = run(&["spray", "--catalog", "ex4.1", "--param", "k=1", "--samples", "10", "--seed", "3"]);
    let v = json(&o);
    assert_eq!(v["tool"], "cylfin");
    assert_eq!(v["command"], "spray");
    assert_eq!(v["config"]["params"]["k"], "1");
    assert_eq!(v["config"]["seed"], 3);
    for c in v["checks"].as_array().unwrap() {
        assert!(c["name"].is_string() && c["tolerance"].is_number() && c["passed"].is_boolean());
    }
    assert!(v["timing_ms"].is_number());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "catalog = \"ex4.3\"\nseed = 5\nsamples = 8\nn = 4\n[params]\nh = 0.25\ng = \"exp(r^2/2)\"\n").unwrap();
    let p = path.to_str().unwrap();
    let v = json(&run(&["validate", "--config", p]));
    assert_eq!(v["config"]["n"], 4);
    assert_eq!(v["config"]["params"]["h"], "0.25");
    let v = json(&run(&["validate", "--config", p, "--n", "3", "--param", "h=0.5", "--samples", "6"]));
    assert_eq!(v["config"]["n"], 3);
    assert_eq!(v["config"]["samples"], 6);
    assert_eq!(v["config"]["params"]["h"], "0.5");
    assert_eq!(v["config"]["params"]["g"], "exp(r^2/2)");
    std::fs::write(&path, "catalog = \"ex4.3\"\nbogus = 1\n").unwrap();
    assert_eq!(run(&["validate", "--config", p]).code, EXIT_USAGE);
}

#[test]
fn out_file_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = run(&["douglas", "--catalog", "euclidean", "--samples", "5", "--seed", "1", "--format", "csv", "--out", out.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_PASS);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "check,max_abs,tolerance,passed");
    assert!(text.contains("douglas vanishing"));
}

#[test]
fn geodesic_trace_csv() {
    let o = run(&[
        "geodesic", "--catalog", "ex4.3", "--x", "0,0.1,0.2,0", "--y", "0.3,0.2,-0.1,0.1", "--t-end", "0.5", "--steps", "50",
        "--format", "csv",
    ]);
    assert_eq!(o.code, EXIT_PASS, "{}", o.stderr);
    let mut lines = o.stdout.lines();
    assert_eq!(lines.next().unwrap(), "t,x0,x1,x2,x3,v0,v1,v2,v3,F");
    assert_eq!(lines.count(), 51);
    let bad = run(&["geodesic", "--catalog", "ex4.3", "--x", "0,0.1,0.2,0", "--y", "0.3,0.2,-0.1,0.1", "--steps", "0"]);
    assert_eq!(bad.code, EXIT_USAGE);
}

#[test]
fn examples_lists_every_entry() {
    let v = json(&run(&["examples", "--samples", "10", "--seed", "2"]));
    let entries = v["data"]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 8);
    assert_eq!(v["passed"], Value::Bool(true));
    let one = json(&run(&["examples", "--catalog", "ex4.2", "--samples", "10", "--seed", "2"]));
    assert!(one["discrepancies"].as_array().unwrap().iter().any(|d| d["field"] == "U"));
}

#[test]
fn binary_exit_status() {
    let bin = env!("CARGO_BIN_EXE_cylfin");
    let ok = Command::new(bin).args(["symcheck", "--catalog", "ex4.5", "--samples", "5", "--seed", "9"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(v["passed"], Value::Bool(true));
    let usage = Command::new(bin).arg("douglas").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
    assert!(!usage.stderr.is_empty());
}
