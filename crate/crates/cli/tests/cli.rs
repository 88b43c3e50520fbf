use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fksmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fksmc")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn run(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    fksmc(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// `eta_{n,n}(1{0}) - pi(0)` for the two-state fixture, by direct recursion.
fn two_state_bias(n: usize) -> f64 {
    let log_pi = [0.0, -1.5];
    let gamma = |k: usize| 0.7 + 0.3 * k as f64 / n as f64;
    let mut eta = [1.0, 0.0];
    for k in 0..n {
        let inc = gamma(k + 1) - gamma(k);
        let w = [eta[0] * (inc * log_pi[0]).exp(), eta[1] * (inc * log_pi[1]).exp()];
        let z = w[0] + w[1];
        let g = gamma(k + 1);
        let up = 0.2 * (g * (log_pi[0] - log_pi[1])).min(0.0).exp();
        let down = 0.2 * (g * (log_pi[1] - log_pi[0])).min(0.0).exp();
        eta = [(w[0] * (1.0 - down) + w[1] * up) / z, (w[0] * down + w[1] * (1.0 - up)) / z];
    }
    let pi0 = 1.0 / (1.0 + (-1.5f64).exp());
    eta[0] - pi0
}

#[test]
fn validate_applies_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"experiment": "bias-decay", "seed": 1}"#);
    let o = fksmc(&["validate", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).is_empty(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["model"]["schedule"]["gamma_floor"], 0.7);
    assert_eq!(v["theory"]["alpha"], 0.25);
    assert_eq!(v["theory"]["p"], 1.0);
    assert_eq!(v["theory"]["s"], 1.0);
    assert_eq!(v["grids"]["n"], serde_json::json!([5, 10, 20, 40]));
}

#[test]
fn low_floor_warns() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"experiment": "counterexample", "seed": 1, "model": {"schedule": {"gamma_floor": 0.3}}}"#);
    let o = fksmc(&["validate", &cfg]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("(1+s)p(1-γ̲)/γ̲ = 4.67 ≥ 1: outside the stability hypotheses"), "{}", stderr(&o));

    let out = dir.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let warnings = summary["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().starts_with("(1+s)p(1-γ̲)/γ̲ = 4.67")));
}

#[test]
fn missing_seed_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"experiment": "bias-decay"}"#);
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn malformed_configs_exit_one_without_outputs() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("truncated", r#"{"experiment": "run", "seed": 1"#, "(root)"),
        ("unknown key", r#"{"experiment": "run", "seed": 1, "model": {"betta": 0.5}}"#, "model"),
        ("empty grid", r#"{"experiment": "run", "seed": 1, "grids": {"n": []}}"#, "grids.n"),
        ("bad name", r#"{"experiment": "run", "seed": 1, "model": {"increment": {"name": "cauchy"}}}"#, "model.increment.name"),
    ];
    for (label, text, path) in cases {
        let cfg = write_config(dir.path(), "c.json", text);
        let out = dir.path().join(label.replace(' ', "_"));
        let o = run(&cfg, &out, &[]);
        assert_eq!(o.status.code(), Some(1), "{label}");
        assert!(stderr(&o).contains(path), "{label}: {}", stderr(&o));
        assert!(!out.exists(), "{label} wrote outputs");
    }
}

#[test]
fn bias_decay_golden_on_fixture() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"experiment": "bias-decay", "seed": 11, "replicates": 20, "grids": {"n": [3, 6, 12, 24], "particles": [100]}}"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&cfg, out, &[]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for name in ["bias_exact.csv", "bias_mc.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let csv = fs::read_to_string(a.join("bias_exact.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,bias,se,included"));
    let mut prev = f64::INFINITY;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let n: usize = cols[0].parse().unwrap();
        let bias: f64 = cols[1].parse().unwrap();
        let want = two_state_bias(n);
        assert!((bias - want).abs() <= 1e-14, "n = {n}: {bias} vs {want}");
        assert!(bias.abs() < prev);
        prev = bias.abs();
        // 17 significant digits.
        assert_eq!(cols[1].split('e').next().unwrap().trim_start_matches('-').len(), 18, "{}", cols[1]);
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "success");
    assert_eq!(summary["seed"], 11);
    assert_eq!(summary["config"]["replicates"], 20);
}

#[test]
fn counterexample_reports_witness() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"experiment": "counterexample", "seed": 0, "counterexample": {"epsilon": 1.0, "delta": 0.9}}"#);
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let probe = &summary["result"]["probe"];
    let (y, yp) = (&probe["y"], &probe["y_prime"]);
    assert_eq!(y["point"].as_array().unwrap().len(), 2);
    assert_eq!(yp["point"].as_array().unwrap().len(), 2);
    let f = |v: &Value| v.as_f64().unwrap();
    // Recompute the ratio from the reported atoms.
    let (w, wp) = (f(&y["weight"]), f(&yp["weight"]));
    let eta_g = w * f(&y["g"]) + wp * f(&yp["g"]);
    let eta_gv = w * f(&y["g"]) * f(&y["v"]) + wp * f(&yp["g"]) * f(&yp["v"]);
    let eta_v = w * f(&y["v"]) + wp * f(&yp["v"]);
    assert!(eta_gv / eta_g > 1.9 * eta_v);
    assert_eq!(f(&probe["psi_value"]), 2.0);
    let csv = fs::read_to_string(out.join("counterexample.csv")).unwrap();
    assert!(csv.starts_with("atom,x1,x2,weight,g,v\ny,"));
}

#[test]
fn workers_do_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let configs = [
        r#"{"experiment": "n-scaling", "seed": 5, "replicates": 100, "grids": {"n": [4, 8], "particles": [50, 200]}}"#,
        r#"{"experiment": "run", "seed": 5, "replicates": 6, "grids": {"n": [5], "particles": [64]},
            "model": {"target": {"name": "gaussian", "mean": [0.0, 1.0], "sd": 1.0}},
            "initial": {"kind": "tempered-floor", "shift": [3.0, 0.0]}, "test_function": {"kind": "coordinate", "index": 1}}"#,
        r#"{"experiment": "drift-check", "seed": 5, "replicates": 4, "grids": {"n": [5, 10], "particles": [100]},
            "model": {"target": {"name": "gaussian", "mean": [0.0], "sd": 1.0}}, "drift": {"proposals": 500}}"#,
        r#"{"experiment": "lemma1-audit", "seed": 5, "grids": {"n": [2, 7, 30]}}"#,
    ];
    for (i, text) in configs.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("c{i}.json"), text);
        let (one, eight) = (dir.path().join(format!("w1_{i}")), dir.path().join(format!("w8_{i}")));
        let a = run(&cfg, &one, &["--workers", "1"]);
        let b = run(&cfg, &eight, &["--workers", "8"]);
        assert_eq!(a.status.code(), b.status.code(), "{text}");
        assert_ne!(a.status.code(), Some(1), "{}", stderr(&a));
        let files = |d: &Path| {
            let mut v: Vec<_> = fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
            v.sort();
            v
        };
        assert_eq!(files(&one), files(&eight));
        for name in files(&one) {
            if name.ends_with(".csv") {
                assert_eq!(fs::read(one.join(&name)).unwrap(), fs::read(eight.join(&name)).unwrap(), "{name} of {text}");
            }
        }
        let result = |d: &Path| serde_json::from_str::<Value>(&fs::read_to_string(d.join("summary.json")).unwrap()).unwrap()["result"].clone();
        assert_eq!(result(&one), result(&eight));
    }
}

#[test]
fn lemma1_audit_rejects_continuous_targets() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"experiment": "lemma1-audit", "seed": 1, "model": {"target": {"name": "gaussian", "mean": [0.0], "sd": 1.0}}}"#);
    let o = fksmc(&["validate", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("experiment"));
}

#[test]
fn inconclusive_exits_two() {
    // Started at the floor law the fixture is exact at every n, so no bias is left to fit.
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"experiment": "bias-decay", "seed": 1, "replicates": 1, "initial": {"kind": "tempered-floor"}}"#);
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "inconclusive");
}
