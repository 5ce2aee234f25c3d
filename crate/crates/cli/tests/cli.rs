use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn disclosure(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disclosure"))
        .args(args)
        .env_remove("DISCLOSURE_OUT")
        .env_remove("DISCLOSURE_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SIMULATE: &str = r#"{
  "policy": {"type": "preset", "name": "paper-2level"},
  "instance": {"means": [0.55, 0.45], "horizon": 400},
  "behavior": {"kind": "empirical_mean"},
  "seeds": {"base": 7, "reps": 3}
}"#;

#[test]
fn simulate_writes_one_summary_per_rep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SIMULATE);
    let out = dir.path().join("out");
    let o = disclosure(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let lines: Vec<Value> = fs::read_to_string(out.join("traces.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    let seeds: Vec<u64> = lines.iter().map(|v| v["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, vec![7, 8, 9]);
    for v in &lines {
        assert_eq!(v["T"], 400);
        assert_eq!(v["policy"], "paper-2level");
        assert!(v["config_digest"].is_string() && v["version"].is_string());
        assert!(v["herded"].is_boolean());
        let pulls: u64 = v["pulls"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_u64().unwrap())
            .sum();
        assert_eq!(pulls, 400);
    }
    let csv = fs::read_to_string(out.join("regret.csv")).unwrap();
    assert!(csv.starts_with("policy,T,delta,seed,regret\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SIMULATE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (d, threads) in [(&a, "1"), (&b, "4")] {
        let o = disclosure(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            d.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["regret.csv", "traces.jsonl", "manifest.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SIMULATE);
    let out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_disclosure"))
        .args(["simulate", "--config", &cfg, "--format", "csv"])
        .env("DISCLOSURE_OUT", &out)
        .env("DISCLOSURE_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("regret.csv").exists());
    assert!(!out.join("traces.jsonl").exists());
}

#[test]
fn unknown_policy_type_is_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = SIMULATE.replace(
        r#""type": "preset", "name": "paper-2level""#,
        r#""type": "greedy""#,
    );
    let cfg = write(dir.path(), "c.json", &text);
    let o = disclosure(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("policy.type"), "{err}");
}

#[test]
fn infeasible_graph_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let text = SIMULATE.replace(
        r#""type": "preset", "name": "paper-2level""#,
        r#""type": "two_level", "t1": 500"#,
    );
    let cfg = write(dir.path(), "c.json", &text);
    let o = disclosure(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

const SWEEP: &str = r#"{
  "policies": [{"type": "constant", "arm": "worst"}, {"type": "full_disclosure"}],
  "instance": {"means": [0.6, 0.4]},
  "seeds": {"reps": 4},
  "sweep": {"horizons": [128, 256, 512, 1024]}
}"#;

#[test]
fn sweep_fits_linear_exponent_for_constant_worst() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", SWEEP);
    let out = dir.path().join("out");
    let o = disclosure(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!((v["exponent"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(v["config_digest"].is_string());
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2 * 4);
    assert!(!csv.lines().next().unwrap().contains("paired_diff"));
}

#[test]
fn paired_sweep_has_difference_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", SWEEP);
    let out = dir.path().join("out");
    let o = disclosure(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--paired-tapes",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "policy,T,delta,seed,regret,paired_diff"
    );
    for l in lines.filter(|l| l.starts_with("constant_worst")) {
        assert!(l.ends_with(",0"), "{l}");
    }
}

#[test]
fn empty_grid_is_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        &SWEEP.replace("[128, 256, 512, 1024]", "[]"),
    );
    let o = disclosure(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gap_sweep_rows() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
      "policy": {"type": "full_disclosure"},
      "instance": {"delta": 0.1, "horizon": 200},
      "seeds": {"reps": 2},
      "sweep": {"deltas": [0.0, 0.1, 0.2]}
    }"#;
    let cfg = write(dir.path(), "g.json", text);
    let out = dir.path().join("out");
    let o = disclosure(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    for l in csv.lines().skip(1).take(2) {
        assert!(l.ends_with(",0"), "zero gap has zero regret: {l}");
    }
}

const GRAPH: &str = r#"{
  "policy": {"type": "l_level", "sigma": 2, "group_sizes": [1, 1, 1]},
  "instance": {"means": [0.6, 0.4], "horizon": 32},
  "seeds": {"reps": 1}
}"#;

#[test]
fn graph_dot_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.json", GRAPH);
    let out = dir.path().join("out");
    let o = disclosure(&["graph", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let dot = fs::read_to_string(out.join("graph.dot")).unwrap();
    assert!(dot.contains("digraph"));
    assert!(dot.contains("r1 -> r2"));
    let v: Value =
        serde_json::from_str(&fs::read_to_string(out.join("graph_summary.json")).unwrap()).unwrap();
    assert_eq!(v["total"], 32);
    assert_eq!(v["levels"].as_array().unwrap().len(), 3);
}

#[test]
fn graph_collapsed_and_reduced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.json", GRAPH);
    for (flag, out) in [("--collapse", "c"), ("--reduce", "r")] {
        let out = dir.path().join(out);
        let o = disclosure(&[
            "graph",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--dot",
            flag,
        ]);
        assert_eq!(o.status.code(), Some(0));
        let dot = fs::read_to_string(out.join("graph.dot")).unwrap();
        assert!(dot.contains("digraph"));
        if flag == "--collapse" {
            assert!(dot.contains("g0"));
        }
        assert!(!out.join("graph_summary.json").exists());
    }
}

fn check(text: &str) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.json", text);
    disclosure(&["check", "--config", &cfg, "--fuzz", "2000"])
}

#[test]
fn check_exit_codes() {
    let ok = check(r#"{"kind": "empirical_mean"}"#);
    assert_eq!(ok.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["violation_count"], 0);

    let bad = check(r#"{"kind": "adversarial_violator"}"#);
    assert_eq!(bad.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert!(!report["violations"].as_array().unwrap().is_empty());

    let beta = check(r#"{"kind": "beta_posterior", "n_est": 20}"#);
    assert_eq!(beta.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&beta.stdout).unwrap();
    assert!(report["violations"]
        .as_array()
        .unwrap()
        .iter()
        .any(|v| v["n"] == 20));
    assert!(String::from_utf8_lossy(&beta.stderr).contains("n=20"));

    let schema = check(r#"{"kind": "beta_posterior", "nest": 20}"#);
    assert_eq!(schema.status.code(), Some(2));
}

#[test]
fn check_accepts_experiment_documents() {
    assert_eq!(check(SIMULATE).status.code(), Some(0));
}
