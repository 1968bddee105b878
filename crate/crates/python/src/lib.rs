//! Python bindings for `riskctmdp`.
//!
//! Models, policies and solver results cross the boundary as plain Python
//! values: policies are a list of action indices, a list of per-state action
//! weights, or a dict keyed by state label (values are action labels or
//! `{action: weight}` dicts). States may be given by index or label.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;

use riskctmdp::io::{self, PolicyEntry, PolicyFile};
use riskctmdp::{
    average_solver, CtmdpModel, DetPolicy, Error, FirstPassageSolution, McEstimate, Membership,
    Policy, RandStationaryPolicy, SolutionStatus, DEFAULT_TOL,
};

create_exception!(riskctmdp_py, SolverError, PyException);

fn py_err(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::InvalidModel(_)
        | Error::PolicyIncompatible(_)
        | Error::InvalidArgument(_)
        | Error::BracketInvalid(_)
        | Error::Json(_) => PyValueError::new_err(err.to_string()),
        other => SolverError::new_err(other.to_string()),
    }
}

#[derive(FromPyObject)]
enum StateArg {
    Index(usize),
    Label(String),
}

impl StateArg {
    fn resolve(&self, model: &CtmdpModel) -> PyResult<usize> {
        match self {
            StateArg::Index(i) if *i < model.n_states() => Ok(*i),
            StateArg::Index(i) => Err(PyValueError::new_err(format!("state {i} out of range"))),
            StateArg::Label(l) => model
                .state_index(l)
                .ok_or_else(|| PyValueError::new_err(format!("unknown state '{l}'"))),
        }
    }
}

fn state_or_first(model: &CtmdpModel, arg: Option<StateArg>) -> PyResult<usize> {
    arg.map_or(Ok(0), |s| s.resolve(model))
}

#[derive(FromPyObject)]
enum EntryArg {
    Action(String),
    Weights(BTreeMap<String, f64>),
}

#[derive(FromPyObject)]
enum PolicyArg {
    Indices(Vec<usize>),
    Weights(Vec<Vec<f64>>),
    Labels(BTreeMap<String, EntryArg>),
}

impl PolicyArg {
    fn resolve(self, model: &CtmdpModel) -> PyResult<Policy> {
        let policy = match self {
            PolicyArg::Indices(v) => Policy::Deterministic(DetPolicy(v)),
            PolicyArg::Weights(w) => Policy::Randomized(RandStationaryPolicy { weights: w }),
            PolicyArg::Labels(map) => {
                let file: PolicyFile = map
                    .into_iter()
                    .map(|(k, v)| {
                        let entry = match v {
                            EntryArg::Action(a) => PolicyEntry::Action(a),
                            EntryArg::Weights(w) => PolicyEntry::Weights(w),
                        };
                        (k, entry)
                    })
                    .collect();
                io::policy_from_file(model, &file).map_err(py_err)?
            }
        };
        match &policy {
            Policy::Deterministic(f) => f.check(model).map_err(py_err)?,
            Policy::Randomized(r) => r.check(model).map_err(py_err)?,
        }
        Ok(policy)
    }

    fn deterministic(self, model: &CtmdpModel) -> PyResult<DetPolicy> {
        match self.resolve(model)? {
            Policy::Deterministic(f) => Ok(f),
            Policy::Randomized(_) => {
                Err(PyValueError::new_err("a deterministic policy is required"))
            }
        }
    }
}

/// A finite controlled Markov chain with a risk coefficient.
#[pyclass(name = "Model", module = "riskctmdp_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: CtmdpModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (states, actions, rates, costs, lambda_))]
    fn new(
        states: Vec<String>,
        actions: Vec<Vec<String>>,
        rates: Vec<Vec<Vec<f64>>>,
        costs: Vec<Vec<f64>>,
        lambda_: f64,
    ) -> Self {
        Self {
            inner: CtmdpModel {
                states,
                actions,
                rates,
                costs,
                lambda: lambda_,
            },
        }
    }

    /// Loads a model from a JSON file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let loaded = io::load_model(path).map_err(py_err)?;
        Ok(Self {
            inner: loaded.model,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let loaded = io::parse_model(text).map_err(py_err)?;
        Ok(Self {
            inner: loaded.model,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        io::model_to_json(&self.inner).map_err(py_err)
    }

    #[getter]
    fn states(&self) -> Vec<String> {
        self.inner.states.clone()
    }

    #[getter]
    fn actions(&self) -> Vec<Vec<String>> {
        self.inner.actions.clone()
    }

    #[getter]
    fn rates(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.rates.clone()
    }

    #[getter]
    fn costs(&self) -> Vec<Vec<f64>> {
        self.inner.costs.clone()
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    fn policy_count(&self) -> f64 {
        self.inner.policy_count()
    }

    fn with_lambda(&self, lambda_: f64) -> Self {
        Self {
            inner: self.inner.with_lambda(lambda_),
        }
    }

    fn with_cost_offset(&self, offset: f64) -> Self {
        Self {
            inner: self.inner.with_cost_offset(offset),
        }
    }

    /// Violations as `(rule, location, message)` tuples; empty when valid.
    fn validate(&self) -> Vec<(String, String, String)> {
        self.inner
            .validate()
            .violations
            .into_iter()
            .map(|v| (v.rule, v.location, v.message))
            .collect()
    }

    fn warnings(&self) -> Vec<String> {
        self.inner.warnings()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(states={}, policies={}, lambda={})",
            self.inner.n_states(),
            self.inner.policy_count(),
            self.inner.lambda
        )
    }
}

/// Optimal average cost, relative values and an optimal policy.
#[pyclass(name = "SolveResult", module = "riskctmdp_py", frozen, get_all)]
pub struct PySolveResult {
    g_star: f64,
    h_star: Vec<f64>,
    policy: Vec<usize>,
    policy_labels: Vec<(String, String)>,
    residual_op: f64,
    residual_hz: f64,
    bracket_trace: Vec<(f64, f64)>,
    z: usize,
    iterations: usize,
}

#[pymethods]
impl PySolveResult {
    fn __repr__(&self) -> String {
        format!(
            "SolveResult(g_star={}, policy={:?}, residual_op={:e})",
            self.g_star, self.policy, self.residual_op
        )
    }
}

/// First-passage values in both `x = e^{λh}` and `h` form.
#[pyclass(name = "FirstPassage", module = "riskctmdp_py", frozen, get_all)]
pub struct PyFirstPassage {
    g: f64,
    z: usize,
    x: Vec<f64>,
    h: Vec<f64>,
    policy: Vec<usize>,
    finite: bool,
    status: String,
    iterations: usize,
}

impl From<FirstPassageSolution> for PyFirstPassage {
    fn from(s: FirstPassageSolution) -> Self {
        let status = match s.status {
            SolutionStatus::Exact => "exact",
            SolutionStatus::Divergent => "divergent",
            SolutionStatus::LowerBound => "lower_bound",
        };
        Self {
            g: s.g,
            z: s.z,
            x: s.x,
            h: s.h,
            policy: s.policy.0,
            finite: s.finite,
            status: status.into(),
            iterations: s.iterations,
        }
    }
}

#[pymethods]
impl PyFirstPassage {
    fn __repr__(&self) -> String {
        format!(
            "FirstPassage(g={}, z={}, h={:?}, status={})",
            self.g, self.z, self.h, self.status
        )
    }
}

/// Monte Carlo estimate with reproducibility metadata.
#[pyclass(name = "Estimate", module = "riskctmdp_py", frozen, get_all)]
pub struct PyEstimate {
    point: f64,
    std_error: f64,
    n_trajectories: usize,
    horizon: f64,
    seed: u64,
    censored: usize,
    censor_flag: bool,
}

impl From<McEstimate> for PyEstimate {
    fn from(e: McEstimate) -> Self {
        Self {
            point: e.point,
            std_error: e.std_error,
            n_trajectories: e.n_trajectories,
            horizon: e.horizon,
            seed: e.seed,
            censored: e.censored,
            censor_flag: e.censor_flag,
        }
    }
}

#[pymethods]
impl PyEstimate {
    fn __repr__(&self) -> String {
        format!(
            "Estimate(point={}, std_error={})",
            self.point, self.std_error
        )
    }
}

/// Solves for the optimal risk-sensitive average cost.
#[pyfunction]
#[pyo3(signature = (model, z = None, tol = DEFAULT_TOL))]
fn solve(
    py: Python<'_>,
    model: &PyModel,
    z: Option<StateArg>,
    tol: f64,
) -> PyResult<PySolveResult> {
    let m = &model.inner;
    let z = state_or_first(m, z)?;
    let r = py.detach(|| riskctmdp::solve(m, z, tol)).map_err(py_err)?;
    Ok(PySolveResult {
        g_star: r.g_star,
        policy_labels: r.policy.labels(m),
        h_star: r.h_star,
        policy: r.policy.0,
        residual_op: r.residual_op,
        residual_hz: r.residual_hz,
        bracket_trace: r.bracket_trace,
        z: r.z,
        iterations: r.iterations,
    })
}

/// First-passage values of a fixed deterministic policy.
#[pyfunction]
#[pyo3(signature = (model, policy, g, z = None))]
fn first_passage_value(
    model: &PyModel,
    policy: PolicyArg,
    g: f64,
    z: Option<StateArg>,
) -> PyResult<PyFirstPassage> {
    let m = &model.inner;
    let z = state_or_first(m, z)?;
    let f = policy.deterministic(m)?;
    Ok(riskctmdp::first_passage_value(m, &f, g, z)
        .map_err(py_err)?
        .into())
}

/// Optimal first-passage values and a minimizing policy.
#[pyfunction]
#[pyo3(signature = (model, g, z = None))]
fn optimal_first_passage(model: &PyModel, g: f64, z: Option<StateArg>) -> PyResult<PyFirstPassage> {
    let m = &model.inner;
    let z = state_or_first(m, z)?;
    Ok(riskctmdp::optimal_first_passage(m, g, z)
        .map_err(py_err)?
        .into())
}

/// Sign of the optimal first-passage value at `z`: "negative", "zero" or
/// "positive". `g` is achievable unless the sign is positive.
#[pyfunction]
#[pyo3(signature = (model, g, z = None))]
fn membership(model: &PyModel, g: f64, z: Option<StateArg>) -> PyResult<&'static str> {
    let m = &model.inner;
    let z = state_or_first(m, z)?;
    let (sign, _) = riskctmdp::membership_in_g(m, g, z).map_err(py_err)?;
    Ok(match sign {
        Membership::Negative => "negative",
        Membership::Zero => "zero",
        Membership::Positive => "positive",
    })
}

/// Risk-sensitive average cost of a stationary policy via its principal
/// eigenvalue.
#[pyfunction]
fn policy_value(model: &PyModel, policy: PolicyArg) -> PyResult<f64> {
    let m = &model.inner;
    let chain = riskctmdp::induced_generator(m, &policy.resolve(m)?).map_err(py_err)?;
    if !riskctmdp::model::chain_irreducible(&chain) {
        return Err(py_err(Error::NotIrreducible));
    }
    let (value, _) = average_solver::chain_value_spectral(&chain, m.lambda).map_err(py_err)?;
    Ok(value)
}

/// Expected cost under the stationary distribution of a policy.
#[pyfunction]
fn risk_neutral_value(model: &PyModel, policy: PolicyArg) -> PyResult<f64> {
    let m = &model.inner;
    let chain = riskctmdp::induced_generator(m, &policy.resolve(m)?).map_err(py_err)?;
    let pi = average_solver::chain_stationary_distribution(&chain).map_err(py_err)?;
    Ok(pi.iter().zip(&chain.costs).map(|(p, c)| p * c).sum())
}

/// Minimum over all deterministic policies: `(policy, value, evaluated)`.
#[pyfunction]
fn brute_force_optimal(py: Python<'_>, model: &PyModel) -> PyResult<(Vec<usize>, f64, usize)> {
    let m = &model.inner;
    let r = py
        .detach(|| riskctmdp::brute_force_optimal(m))
        .map_err(py_err)?;
    Ok((r.policy.0, r.value, r.evaluated))
}

/// Monte Carlo estimate of the finite-horizon risk-sensitive average cost.
#[pyfunction]
#[pyo3(signature = (model, policy, i0 = None, horizon = 200.0, n = 10_000, seed = 42))]
fn estimate_average_cost(
    py: Python<'_>,
    model: &PyModel,
    policy: PolicyArg,
    i0: Option<StateArg>,
    horizon: f64,
    n: usize,
    seed: u64,
) -> PyResult<PyEstimate> {
    let m = &model.inner;
    let i0 = state_or_first(m, i0)?;
    let p = policy.resolve(m)?;
    let est = py
        .detach(|| riskctmdp::estimate_average_cost(m, &p, i0, horizon, n, seed))
        .map_err(py_err)?;
    Ok(est.into())
}

/// Monte Carlo estimate of a first-passage value.
#[pyfunction]
#[pyo3(signature = (model, policy, g, z = None, i0 = None, n = 10_000, seed = 42, max_time = None))]
#[allow(clippy::too_many_arguments)]
fn estimate_first_passage(
    py: Python<'_>,
    model: &PyModel,
    policy: PolicyArg,
    g: f64,
    z: Option<StateArg>,
    i0: Option<StateArg>,
    n: usize,
    seed: u64,
    max_time: Option<f64>,
) -> PyResult<PyEstimate> {
    let m = &model.inner;
    let z = state_or_first(m, z)?;
    let i0 = state_or_first(m, i0)?;
    let f = policy.deterministic(m)?;
    let est = py
        .detach(|| riskctmdp::estimate_first_passage(m, &f, g, z, i0, n, seed, max_time))
        .map_err(py_err)?;
    Ok(est.into())
}

/// One simulated path: `(jump_times, states)`, with `states[k]` occupied
/// until `jump_times[k]` and the last state held to the horizon.
#[pyfunction]
#[pyo3(signature = (model, policy, horizon, i0 = None, seed = 42))]
fn simulate_trajectory(
    model: &PyModel,
    policy: PolicyArg,
    horizon: f64,
    i0: Option<StateArg>,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let m = &model.inner;
    let i0 = state_or_first(m, i0)?;
    let p = policy.resolve(m)?;
    let t = riskctmdp::simulate_trajectory(m, &p, i0, horizon, seed).map_err(py_err)?;
    Ok((t.jump_times, t.states))
}

#[pymodule]
pub fn riskctmdp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PySolveResult>()?;
    m.add_class::<PyFirstPassage>()?;
    m.add_class::<PyEstimate>()?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(first_passage_value, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_first_passage, m)?)?;
    m.add_function(wrap_pyfunction!(membership, m)?)?;
    m.add_function(wrap_pyfunction!(policy_value, m)?)?;
    m.add_function(wrap_pyfunction!(risk_neutral_value, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_optimal, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_average_cost, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_first_passage, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_trajectory, m)?)?;
    Ok(())
}
