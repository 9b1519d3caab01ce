use std::path::{Path, PathBuf};
use std::process::Command;

use nlmv::{emit_frontier_csv, run, Invocation, Task, EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, EXIT_SCHEMA, EXIT_VALIDATION};
use nlmv_core::{frontier_variance, FrontierPoint};
use serde_json::Value;

fn model(lo: f64, hi: f64) -> Value {
    serde_json::json!({ "dim": 1, "rate": 0.03, "theta_lower": [lo], "theta_upper": [hi], "sigma": [[0.2]] })
}

fn config(model: Value, extra: Value) -> Value {
    let mut c = serde_json::json!({
        "model": model,
        "grid": { "horizon": 1.0, "steps": 100 },
        "numerics": { "paths": 2000, "seed": 3 },
        "problem": { "x0": 1.0, "targets": [1.05, 1.1, 1.2] },
    });
    for (k, v) in extra.as_object().unwrap() {
        c[k] = v.clone();
    }
    c
}

struct Run {
    code: i32,
    out: PathBuf,
    _dir: tempfile::TempDir,
}

impl Run {
    fn report(&self) -> Value {
        serde_json::from_slice(&std::fs::read(self.out.join("report.json")).unwrap()).unwrap()
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.out.join(name)).unwrap()
    }
}

fn invoke(task: Task, cfg: &Value) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    let out = dir.path().join("out");
    let code = run(&Invocation { task, config: path, seed: None, paths: None, out: Some(out.clone()) });
    Run { code, out, _dir: dir }
}

#[test]
fn validate_model_a() {
    let r = invoke(Task::Validate, &config(model(0.2, 0.4), serde_json::json!({})));
    assert_eq!(r.code, EXIT_OK);
    let rep = r.report();
    assert_eq!(rep["result"]["valid"], true);
    assert_eq!(rep["status"], "ok");
    for key in ["config_hash", "model_hash", "version", "core_version", "seed"] {
        assert!(!rep[key].is_null(), "{key} missing");
    }
}

#[test]
fn reversed_premia_fail_validation() {
    let r = invoke(Task::Validate, &config(model(0.4, 0.2), serde_json::json!({})));
    assert_eq!(r.code, EXIT_VALIDATION);
    assert_eq!(r.report()["reason"], "validation_failed");
    let r = invoke(Task::Frontier, &config(model(0.4, 0.2), serde_json::json!({})));
    assert_eq!(r.code, EXIT_VALIDATION);
}

#[test]
fn zero_premia_are_infeasible() {
    let cfg = config(model(0.0, 0.0), serde_json::json!({}));
    let r = invoke(Task::Feasibility, &cfg);
    assert_eq!(r.code, EXIT_INFEASIBLE);
    assert_eq!(r.report()["reason"], "infeasible");
    assert_eq!(invoke(Task::Frontier, &cfg).code, EXIT_INFEASIBLE);
}

#[test]
fn frontier_csv_matches_variance() {
    let r = invoke(Task::Frontier, &config(model(0.2, 0.4), serde_json::json!({})));
    assert_eq!(r.code, EXIT_OK);
    let csv = r.read("frontier.csv");
    assert!(!csv.contains('\r'));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("K,d_star,variance,std_dev"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    let p2 = 0.02f64.exp();
    let rho = (-0.03f64).exp();
    for row in &rows {
        let want = frontier_variance(p2, rho, 1.0, row[0]).unwrap();
        assert!((row[2] - want).abs() < 1e-10 * want, "{row:?}");
        assert!((row[3] - want.sqrt()).abs() < 1e-10);
    }
    assert!((rows[1][2] - 0.11851).abs() < 1e-5);
}

#[test]
fn riskless_point_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    let k = 0.03f64.exp();
    emit_frontier_csv(&path, &[FrontierPoint { target: k, d_star: k, variance: 0.0, std_dev: 0.0 }]).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "K,d_star,variance,std_dev\n1.03045453395,1.03045453395,0,0\n");
}

#[test]
fn target_below_riskless_is_rejected() {
    let cfg = config(model(0.2, 0.4), serde_json::json!({ "problem": { "x0": 1.0, "targets": [1.0] } }));
    let r = invoke(Task::Frontier, &cfg);
    assert_eq!(r.code, EXIT_VALIDATION);
    assert_eq!(r.report()["reason"], "invalid_input");
}

#[test]
fn schema_errors() {
    let mut cfg = config(model(0.2, 0.4), serde_json::json!({}));
    cfg["numerics"]["unknown"] = 1.into();
    let r = invoke(Task::Validate, &cfg);
    assert_eq!(r.code, EXIT_SCHEMA);
    assert_eq!(r.report()["reason"], "schema");

    let cfg = config(model(0.2, 0.4), serde_json::json!({ "task": "frontier" }));
    let r = invoke(Task::Validate, &cfg);
    assert_eq!(r.code, EXIT_SCHEMA);
    assert_eq!(r.report()["reason"], "task_mismatch");

    let mut cfg = config(model(0.2, 0.4), serde_json::json!({}));
    cfg.as_object_mut().unwrap().remove("problem");
    assert_eq!(invoke(Task::Frontier, &cfg).code, EXIT_SCHEMA);
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let inv = Invocation {
        task: Task::Validate,
        config: dir.path().join("absent.json"),
        seed: None,
        paths: None,
        out: Some(dir.path().join("out")),
    };
    assert_eq!(run(&inv), EXIT_IO);
    let rep: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(rep["reason"], "io_error");
}

#[test]
fn config_hash_ignores_formatting() {
    let cfg = config(model(0.2, 0.4), serde_json::json!({}));
    let a = invoke(Task::Validate, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("compact.json");
    std::fs::write(&path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = dir.path().join("out");
    run(&Invocation { task: Task::Validate, config: path, seed: None, paths: None, out: Some(out.clone()) });
    let b: Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(a.report()["config_hash"], b["config_hash"]);
}

#[test]
fn simulate_writes_terminal_table() {
    let cfg = config(model(0.2, 0.4), serde_json::json!({ "output": { "terminal_csv": true } }));
    let r = invoke(Task::Simulate, &cfg);
    assert_eq!(r.code, EXIT_OK);
    let csv = r.read("terminal.csv");
    assert_eq!(csv.lines().next(), Some("K,path_id,X_T"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2000);
    let runs = &r.report()["result"]["runs"];
    assert_eq!(runs.as_array().unwrap().len(), 3);
}

#[test]
fn duality_check_writes_residuals() {
    let r = invoke(Task::DualityCheck, &config(model(0.2, 0.4), serde_json::json!({})));
    assert_eq!(r.code, EXIT_OK);
    let csv = r.read("residuals.csv");
    assert_eq!(csv.lines().next(), Some("t,P2_times_expY_minus_1,lambda_ratio_plus_Z"));
    assert_eq!(csv.lines().count(), 1 + 101);
    assert_eq!(r.report()["result"]["pass"], true);
}

fn binary(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nlmv")).args(args).current_dir(cwd).output().unwrap()
}

#[test]
fn binary_exit_codes_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(model(0.2, 0.4), serde_json::json!({}));
    std::fs::write(dir.path().join("c.json"), serde_json::to_vec(&cfg).unwrap()).unwrap();
    let ok = binary(&["feasibility", "--config", "c.json", "--seed", "99", "--paths", "17", "--out", "o"], dir.path());
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    let rep: Value = serde_json::from_slice(&std::fs::read(dir.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(rep["seed"], 99);
    assert_eq!(rep["paths"], 17);
    let bad = binary(&["plot", "--config", "c.json"], dir.path());
    assert_eq!(bad.status.code(), Some(EXIT_SCHEMA));
}
