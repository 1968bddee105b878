//! Command-line front end: argument model, dispatch and JSON reports.
//!
//! Exit codes: 0 success, 2 invalid model, 3 solver error, 4 bad arguments.
//! A JSON [`Report`] is produced in every case.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::average_solver::{
    brute_force_optimal, chain_stationary_distribution, chain_value_spectral, solve, DEFAULT_TOL,
};
use crate::error::Error;
use crate::io::{load_model, load_policy};
use crate::model::{chain_irreducible, induced_generator, CtmdpModel, DetPolicy, Policy};
use crate::simulator::{estimate_average_cost, estimate_first_passage};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID_MODEL: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_BAD_ARGS: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    /// Check the model file and report every violated rule.
    Validate,
    /// Compute the optimal rate, relative values and an optimal policy.
    Solve,
    /// Spectral and risk-neutral values of the policy in --policy.
    Eval,
    /// Monte Carlo estimate under --policy (default: the optimal policy).
    Simulate,
    /// Exhaustive policy enumeration, compared against solve.
    Brute,
    /// Solve over a grid of risk coefficients.
    Sweep,
}

/// Risk-sensitive average-cost CTMDP solver.
#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "riskctmdp", version, about)]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: CommandKind,

    /// Model JSON file.
    pub model_path: PathBuf,

    /// Reference state label (default: first state).
    #[arg(long)]
    pub z: Option<String>,

    /// Bisection tolerance on the optimal rate.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,

    /// Override the model's risk coefficient.
    #[arg(long = "lambda")]
    pub lambda_override: Option<f64>,

    /// Policy JSON file (state label → action label or weight map).
    #[arg(long = "policy")]
    pub policy_path: Option<PathBuf>,

    #[arg(long, default_value_t = 42)]
    pub seed: u64,

    /// Number of simulated trajectories.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,

    /// Simulation horizon. The risk-sensitive rate is a long-run limit; the
    /// default of 200 time units is a heuristic, not a certified choice.
    #[arg(long, default_value_t = 200.0)]
    pub horizon: f64,

    /// Start state label for simulation (default: first state).
    #[arg(long)]
    pub i0: Option<String>,

    /// With `simulate`: estimate the first-passage value at this rate instead
    /// of the average cost.
    #[arg(long = "passage-g")]
    pub passage_g: Option<f64>,

    /// Risk coefficients for `sweep`.
    #[arg(long = "grid", value_delimiter = ',', default_value = "0.25,0.5,1,2,4")]
    pub lambda_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: Option<CommandKind>,
    pub config: Option<RunConfig>,
    pub ok: bool,
    pub results: Value,
    pub error: Option<String>,
    pub warnings: Vec<String>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    pub exit_code: i32,
}

struct Failure {
    code: i32,
    message: String,
    results: Value,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            results: Value::Null,
        }
    }

    fn args(message: impl Into<String>) -> Self {
        Self::new(EXIT_BAD_ARGS, message)
    }

    fn solver(err: Error) -> Self {
        let code = match err {
            Error::InvalidModel(_) => EXIT_INVALID_MODEL,
            Error::InvalidArgument(_) | Error::PolicyIncompatible(_) => EXIT_BAD_ARGS,
            _ => EXIT_SOLVER,
        };
        Self::new(code, err.to_string())
    }
}

/// Report for arguments that could not be parsed at all.
pub fn argument_error_report(message: &str) -> Report {
    Report {
        schema_version: SCHEMA_VERSION,
        command: None,
        config: None,
        ok: false,
        results: Value::Null,
        error: Some(message.to_string()),
        warnings: Vec::new(),
        wall_clock_seconds: 0.0,
    }
}

pub fn run(config: &RunConfig) -> Outcome {
    let started = Instant::now();
    let mut warnings = Vec::new();
    let result = dispatch(config, &mut warnings);
    let (ok, results, error, exit_code) = match result {
        Ok(v) => (true, v, None, EXIT_OK),
        Err(f) => (false, f.results, Some(f.message), f.code),
    };
    Outcome {
        report: Report {
            schema_version: SCHEMA_VERSION,
            command: Some(config.command),
            config: Some(config.clone()),
            ok,
            results,
            error,
            warnings,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        },
        exit_code,
    }
}

fn dispatch(config: &RunConfig, warnings: &mut Vec<String>) -> Result<Value, Failure> {
    check_numeric(config)?;
    let model = load(config, warnings)?;
    let report = model.validate();
    if config.command == CommandKind::Validate {
        return if report.ok {
            Ok(to_value(&report))
        } else {
            Err(Failure {
                code: EXIT_INVALID_MODEL,
                message: format!("model has {} violation(s)", report.violations.len()),
                results: to_value(&report),
            })
        };
    }
    if !report.ok {
        return Err(Failure {
            code: EXIT_INVALID_MODEL,
            message: format!("invalid model: {}", report.violations[0]),
            results: to_value(&report),
        });
    }
    let z = state_arg(&model, config.z.as_deref(), "--z")?;

    match config.command {
        CommandKind::Validate => unreachable!("handled above"),
        CommandKind::Solve => {
            let r = solve(&model, z, config.tol).map_err(Failure::solver)?;
            let mut v = to_value(&r);
            v["policy_labels"] = policy_labels(&model, &r.policy);
            Ok(v)
        }
        CommandKind::Eval => {
            let path = config
                .policy_path
                .as_ref()
                .ok_or_else(|| Failure::args("eval requires --policy"))?;
            let policy = load_policy(&model, path).map_err(|e| Failure::args(e.to_string()))?;
            eval(&model, &policy)
        }
        CommandKind::Simulate => simulate(config, &model, z),
        CommandKind::Brute => {
            let brute = brute_force_optimal(&model).map_err(Failure::solver)?;
            let solved = solve(&model, z, config.tol).map_err(Failure::solver)?;
            if !brute.skipped.is_empty() {
                warnings.push(format!(
                    "{} policies skipped as not irreducible",
                    brute.skipped.len()
                ));
            }
            Ok(json!({
                "brute_force": brute,
                "brute_force_labels": policy_labels(&model, &brute.policy),
                "solve_g_star": solved.g_star,
                "solve_policy_labels": policy_labels(&model, &solved.policy),
                "delta": (solved.g_star - brute.value).abs(),
            }))
        }
        CommandKind::Sweep => {
            let mut rows = Vec::new();
            for &lambda in &config.lambda_grid {
                let m = model.with_lambda(lambda);
                let r = solve(&m, z, config.tol).map_err(Failure::solver)?;
                rows.push(json!({
                    "lambda": lambda,
                    "g_star": r.g_star,
                    "policy": r.policy,
                    "policy_labels": policy_labels(&m, &r.policy),
                    "residual_op": r.residual_op,
                }));
            }
            let g: Vec<f64> = rows
                .iter()
                .map(|r| r["g_star"].as_f64().unwrap_or(f64::NAN))
                .collect();
            let sorted_grid = config.lambda_grid.windows(2).all(|w| w[0] <= w[1]);
            let nondecreasing = g.windows(2).all(|w| w[1] >= w[0] - 1e-9);
            if sorted_grid && !nondecreasing {
                warnings.push("g_star is not nondecreasing in lambda".into());
            }
            Ok(json!({ "rows": rows, "nondecreasing": nondecreasing }))
        }
    }
}

fn check_numeric(config: &RunConfig) -> Result<(), Failure> {
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if !positive(config.tol) {
        return Err(Failure::args("--tol must be positive"));
    }
    if let Some(l) = config.lambda_override {
        if !positive(l) {
            return Err(Failure::args("--lambda must be positive"));
        }
    }
    if !positive(config.horizon) {
        return Err(Failure::args("--horizon must be positive"));
    }
    if config.n < 2 {
        return Err(Failure::args("--n must be at least 2"));
    }
    if config.lambda_grid.is_empty() || !config.lambda_grid.iter().all(|&l| positive(l)) {
        return Err(Failure::args("--grid must be a list of positive numbers"));
    }
    Ok(())
}

fn load(config: &RunConfig, warnings: &mut Vec<String>) -> Result<CtmdpModel, Failure> {
    if !config.model_path.is_file() {
        return Err(Failure::args(format!(
            "model file {} not found",
            config.model_path.display()
        )));
    }
    let loaded = load_model(&config.model_path).map_err(|e| match e {
        Error::Io(e) => Failure::args(format!("cannot read model: {e}")),
        other => Failure::new(EXIT_INVALID_MODEL, format!("cannot parse model: {other}")),
    })?;
    warnings.extend(loaded.warnings);
    let model = match config.lambda_override {
        Some(l) => loaded.model.with_lambda(l),
        None => loaded.model,
    };
    if config.lambda_override.is_some() {
        warnings.extend(model.warnings());
    }
    Ok(model)
}

fn state_arg(model: &CtmdpModel, label: Option<&str>, flag: &str) -> Result<usize, Failure> {
    match label {
        None => Ok(0),
        Some(l) => model
            .state_index(l)
            .ok_or_else(|| Failure::args(format!("{flag}: unknown state '{l}'"))),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn policy_labels(model: &CtmdpModel, f: &DetPolicy) -> Value {
    let map: serde_json::Map<String, Value> = f
        .labels(model)
        .into_iter()
        .map(|(s, a)| (s, Value::String(a)))
        .collect();
    Value::Object(map)
}

fn eval(model: &CtmdpModel, policy: &Policy) -> Result<Value, Failure> {
    let chain = induced_generator(model, policy).map_err(|e| Failure::args(e.to_string()))?;
    if !chain_irreducible(&chain) {
        return Err(Failure::solver(Error::NotIrreducible));
    }
    let (spectral, details) =
        chain_value_spectral(&chain, model.lambda).map_err(Failure::solver)?;
    let pi = chain_stationary_distribution(&chain).map_err(Failure::solver)?;
    let risk_neutral: f64 = pi.iter().zip(&chain.costs).map(|(p, c)| p * c).sum();
    Ok(json!({
        "policy": policy,
        "spectral": { "value": spectral, "method": "spectral", "details": details },
        "risk_neutral": risk_neutral,
        "stationary_distribution": pi,
    }))
}

fn simulate(config: &RunConfig, model: &CtmdpModel, z: usize) -> Result<Value, Failure> {
    let i0 = state_arg(model, config.i0.as_deref(), "--i0")?;
    let policy = match &config.policy_path {
        Some(path) => load_policy(model, path).map_err(|e| Failure::args(e.to_string()))?,
        None => Policy::Deterministic(solve(model, z, config.tol).map_err(Failure::solver)?.policy),
    };
    let estimate = match config.passage_g {
        Some(g) => {
            let Policy::Deterministic(f) = &policy else {
                return Err(Failure::args(
                    "first-passage estimates need a deterministic policy",
                ));
            };
            estimate_first_passage(model, f, g, z, i0, config.n, config.seed, None)
        }
        None => estimate_average_cost(model, &policy, i0, config.horizon, config.n, config.seed),
    }
    .map_err(Failure::solver)?;
    Ok(json!({ "policy": policy, "estimate": estimate }))
}
