use std::fs;
use std::path::{Path, PathBuf};

use nlmv_core::{
    check_feasibility, discount_factor, dual_terminal_wealth_check, duality_consistency_check, efficient_policy,
    frontier_curve, frontier_variance, optimal_cost, simulate_wealth, solve_dual_bsde, validate_model, Error,
    FrontierSpec, Representation, RiccatiCache, RiccatiSolution, SimulationConfig, Which,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{config_hash, Problem, RunConfig, Task};
use crate::output::{emit_frontier_csv, emit_terminal_csv, write_json, write_table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_SCHEMA: i32 = 5;

pub const REPORT_FILE: &str = "report.json";
const DEFAULT_OUT_DIR: &str = "nlmv-out";

#[derive(Debug, Clone)]
pub struct Invocation {
    pub task: Task,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    reason: String,
    message: String,
}

impl Failure {
    fn new(code: i32, reason: &str, message: impl Into<String>) -> Self {
        Self { code, reason: reason.into(), message: message.into() }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(EXIT_IO, "io_error", format!("{}: {e}", path.display()))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Infeasible(_) | Error::DegenerateDual(_) => EXIT_INFEASIBLE,
            e if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        };
        Self { code, reason: e.reason().into(), message: e.to_string() }
    }
}

/// What a task produced; a nonzero `code` still carries a result.
struct Outcome {
    code: i32,
    reason: Option<String>,
    result: Value,
    artifacts: Vec<String>,
}

impl Outcome {
    fn ok(result: Value) -> Self {
        Self { code: EXIT_OK, reason: None, result, artifacts: Vec::new() }
    }

    fn fail(mut self, code: i32, reason: &str) -> Self {
        self.code = code;
        self.reason = Some(reason.into());
        self
    }
}

#[derive(Serialize)]
struct Report {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    task: &'static str,
    status: &'static str,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    paths: Option<usize>,
    artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Value::is_null")]
    result: Value,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn to_json<T: Serialize>(v: &T) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(|e| Failure::new(EXIT_NUMERICAL, "serialization", e.to_string()))
}

/// Caps the global worker pool at `NLMV_THREADS` when set.
pub fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("NLMV_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("NLMV_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("NLMV_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

/// Runs one task end to end and returns the process exit code. A report is
/// written whenever the output directory can be determined and created.
pub fn run(inv: &Invocation) -> i32 {
    let mut report = Report {
        tool: "nlmv",
        version: env!("CARGO_PKG_VERSION"),
        core_version: nlmv_core::VERSION,
        task: inv.task.name(),
        status: "error",
        exit_code: EXIT_SCHEMA,
        reason: None,
        message: None,
        config_hash: String::new(),
        model_hash: None,
        seed: None,
        paths: None,
        artifacts: Vec::new(),
        result: Value::Null,
    };

    let bytes = match fs::read(&inv.config) {
        Ok(b) => b,
        Err(e) => return finish(report, inv.out.as_deref(), Err(Failure::io(&inv.config, e))),
    };
    report.config_hash = hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes));
    let value: Value = match serde_json::from_slice(&bytes) {
        Ok(v) => v,
        Err(e) => return finish(report, inv.out.as_deref(), Err(Failure::new(EXIT_SCHEMA, "schema", e.to_string()))),
    };
    report.config_hash = config_hash(&value);
    let mut cfg: RunConfig = match serde_json::from_value(value) {
        Ok(c) => c,
        Err(e) => return finish(report, inv.out.as_deref(), Err(Failure::new(EXIT_SCHEMA, "schema", e.to_string()))),
    };
    if let Some(seed) = inv.seed {
        cfg.numerics.seed = seed;
    }
    if let Some(paths) = inv.paths {
        cfg.numerics.paths = paths;
    }
    report.model_hash = Some(cfg.model.fingerprint());
    report.seed = Some(cfg.numerics.seed);
    report.paths = Some(cfg.numerics.paths);

    let out = inv.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    if let Err(e) = fs::create_dir_all(&out) {
        return finish(report, None, Err(Failure::io(&out, e)));
    }
    if let Some(declared) = cfg.task {
        if declared != inv.task {
            let msg = format!("config declares task {} but {} was requested", declared.name(), inv.task.name());
            return finish(report, Some(&out), Err(Failure::new(EXIT_SCHEMA, "task_mismatch", msg)));
        }
    }
    let outcome = dispatch(inv.task, &cfg, &out);
    finish(report, Some(&out), outcome)
}

fn finish(mut report: Report, out: Option<&Path>, outcome: Result<Outcome, Failure>) -> i32 {
    match outcome {
        Ok(o) => {
            report.exit_code = o.code;
            report.status = if o.code == EXIT_OK { "ok" } else { "error" };
            report.reason = o.reason;
            report.result = o.result;
            report.artifacts = o.artifacts;
        }
        Err(f) => {
            eprintln!("nlmv: {}: {}", f.reason, f.message);
            report.exit_code = f.code;
            report.reason = Some(f.reason);
            report.message = Some(f.message);
        }
    }
    if let Some(dir) = out {
        let path = dir.join(REPORT_FILE);
        if let Err(e) = fs::create_dir_all(dir).and_then(|_| write_json(&path, &report)) {
            eprintln!("nlmv: io_error: {}: {e}", path.display());
            return if report.exit_code == EXIT_OK { EXIT_IO } else { report.exit_code };
        }
    }
    report.exit_code
}

fn dispatch(task: Task, cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    let validation = validate_model(&cfg.model, &cfg.grid, &cfg.numerics.probe_states)?;
    let valid = validation.is_valid();
    let validation = json!({
        "valid": valid,
        "points_checked": validation.points_checked,
        "violations": validation.violations,
    });
    if task == Task::Validate {
        let o = Outcome::ok(validation);
        return Ok(if valid { o } else { o.fail(EXIT_VALIDATION, "validation_failed") });
    }
    if !valid {
        return Ok(Outcome::ok(validation).fail(EXIT_VALIDATION, "validation_failed"));
    }
    match task {
        Task::Validate => unreachable!(),
        Task::Feasibility => feasibility(cfg),
        Task::Riccati => riccati(cfg, out),
        Task::Frontier => frontier(cfg, out),
        Task::Simulate => simulate(cfg, out),
        Task::DualityCheck => duality(cfg, out),
    }
}

fn problem(cfg: &RunConfig, task: Task) -> Result<&Problem, Failure> {
    let p = cfg.problem.as_ref().ok_or_else(|| {
        Failure::new(EXIT_SCHEMA, "missing_field", format!("task {} needs a problem block", task.name()))
    })?;
    if p.targets.is_empty() {
        return Err(Failure::new(EXIT_SCHEMA, "missing_field", "problem.targets is empty"));
    }
    Ok(p)
}

fn write_artifact(out: &Path, name: &str, f: impl FnOnce(&Path) -> std::io::Result<()>) -> Result<String, Failure> {
    let path = out.join(name);
    f(&path).map_err(|e| Failure::io(&path, e))?;
    Ok(name.to_string())
}

fn feasibility(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let res = check_feasibility(&cfg.model, &cfg.grid, cfg.numerics.paths, cfg.numerics.seed)?;
    let o = Outcome::ok(to_json(&res)?);
    Ok(if res.feasible { o } else { o.fail(EXIT_INFEASIBLE, "infeasible") })
}

fn solution_summary(s: &RiccatiSolution) -> Value {
    let mut v = json!({
        "which": s.which,
        "p0": s.p0(),
        "floor": s.floor,
        "lower_bound": s.lower_bound,
        "upper_bound": s.upper_bound,
        "deterministic": s.is_deterministic(),
    });
    if let Representation::Regression(r) = &s.representation {
        v["clamp_events"] = json!(r.clamp_events);
        v["clamp_fraction"] = json!(r.clamp_fraction);
        v["basis_degree"] = json!(r.basis_degree);
    }
    v
}

fn riccati(cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    let cache = RiccatiCache::new();
    let lsmc = cfg.lsmc();
    let s1 = cache.get_or_solve(&cfg.model, Which::H1, &cfg.grid, &lsmc)?;
    let s2 = cache.get_or_solve(&cfg.model, Which::H2, &cfg.grid, &lsmc)?;
    let y0 = cfg.model.initial_state();
    let rows: Vec<[f64; 3]> = cfg
        .grid
        .nodes()
        .enumerate()
        .map(|(k, t)| [t, s1.at_node(k, y0).p, s2.at_node(k, y0).p])
        .collect();
    let mut o = Outcome::ok(json!({
        "initial_state": y0,
        "p1": solution_summary(&s1),
        "p2": solution_summary(&s2),
    }));
    o.artifacts.push(write_artifact(out, "riccati.csv", |p| write_table(p, &["t", "P1", "P2"], &rows))?);
    Ok(o)
}

fn frontier(cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    let prob = problem(cfg, Task::Frontier)?;
    let pts = frontier_curve(&cfg.model, &cfg.grid, prob.x0, &prob.targets, &cfg.lsmc(), &RiccatiCache::new())?;
    let mut o = Outcome::ok(json!({ "x0": prob.x0, "points": pts }));
    o.artifacts.push(write_artifact(out, "frontier.csv", |p| emit_frontier_csv(p, &pts))?);
    Ok(o)
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    let prob = problem(cfg, Task::Simulate)?;
    let cache = RiccatiCache::new();
    let rho = discount_factor(&cfg.model, &cfg.grid, 0.0)?;
    let sim_cfg =
        SimulationConfig { paths: cfg.numerics.paths, seed: cfg.numerics.seed, keep_terminal: cfg.output.terminal_csv };
    let mut runs = Vec::with_capacity(prob.targets.len());
    let mut terminal = Vec::new();
    for &target in &prob.targets {
        let spec = FrontierSpec { x0: prob.x0, target };
        let pol = efficient_policy(&cfg.model, &cfg.grid, spec, &cfg.lsmc(), &cache)?;
        let p2 = pol.sol2.p0();
        let rep = simulate_wealth(&cfg.model, &pol, prob.x0, &cfg.grid, &sim_cfg)?;
        if let Some(samples) = &rep.terminal_samples {
            terminal.extend(samples.iter().enumerate().map(|(i, &x)| (target, i, x)));
        }
        runs.push(json!({
            "target": target,
            "d_star": pol.d_value,
            "predicted_variance": frontier_variance(p2, rho, prob.x0, target)?,
            "predicted_cost": optimal_cost(pol.sol1.p0(), p2, prob.x0, pol.d_value, rho)?,
            "simulation": to_value(&rep),
        }));
    }
    let mut o = Outcome::ok(json!({ "x0": prob.x0, "runs": runs }));
    if cfg.output.terminal_csv {
        o.artifacts.push(write_artifact(out, "terminal.csv", |p| emit_terminal_csv(p, &terminal))?);
    }
    Ok(o)
}

fn duality(cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    let cache = RiccatiCache::new();
    let lsmc = cfg.lsmc();
    let sol2 = cache.get_or_solve(&cfg.model, Which::H2, &cfg.grid, &lsmc)?;
    let dual = solve_dual_bsde(&cfg.model, &cfg.grid, &lsmc)?;
    let mut check = duality_consistency_check(&sol2, &dual)?;
    if let Some(tol) = cfg.numerics.tolerances.duality_residual {
        check.threshold = tol;
        check.pass = check.max_p_residual < tol && check.max_lambda_residual < tol;
    }
    let rows: Vec<[f64; 3]> =
        check.rows.iter().map(|r| [r.t, r.p2_times_exp_y_minus_1, r.lambda_ratio_plus_z]).collect();
    let mut result = json!({
        "ytilde0": dual.ytilde0(),
        "max_p_residual": check.max_p_residual,
        "max_lambda_residual": check.max_lambda_residual,
        "threshold": check.threshold,
        "pass": check.pass,
    });
    if let Some(prob) = &cfg.problem {
        if let Some(&target) = prob.targets.first() {
            let spec = FrontierSpec { x0: prob.x0, target };
            let tw = dual_terminal_wealth_check(
                &cfg.model,
                &cfg.grid,
                spec,
                &lsmc,
                cfg.numerics.paths,
                cfg.numerics.seed,
                &cache,
            )?;
            result["terminal_wealth"] = to_json(&tw)?;
        }
    }
    let mut o = Outcome::ok(result);
    o.artifacts.push(write_artifact(out, "residuals.csv", |p| {
        write_table(p, &["t", "P2_times_expY_minus_1", "lambda_ratio_plus_Z"], &rows)
    })?);
    Ok(if check.pass { o } else { o.fail(EXIT_NUMERICAL, "duality_residual") })
}
