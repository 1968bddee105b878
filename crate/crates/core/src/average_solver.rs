//! Optimal risk-sensitive average cost by bisection on the first-passage
//! membership test, plus independent evaluators used as oracles.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::first_passage::{membership_in_g_with, FirstPassageOptions, FirstPassageSolution};
use crate::linalg::solve_linear;
use crate::model::{
    argmin_lowest, induced_det, irreducible_under, CtmdpModel, DetPolicy, InducedChain,
};
use crate::simulator::McEstimate;

/// Default bracket width at which bisection stops.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest policy space [`brute_force_optimal`] will enumerate.
pub const MAX_ENUMERATED_POLICIES: f64 = 1e6;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 100_000;
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub g_star: f64,
    pub h_star: Vec<f64>,
    pub policy: DetPolicy,
    pub residual_op: f64,
    pub residual_hz: f64,
    pub bracket_trace: Vec<(f64, f64)>,
    pub z: usize,
    pub iterations: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_bisections: usize,
    pub inner: FirstPassageOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_bisections: 200,
            inner: FirstPassageOptions {
                stop_outside_g: true,
                ..FirstPassageOptions::default()
            },
        }
    }
}

pub fn solve(model: &CtmdpModel, z: usize, tol: f64) -> Result<SolveReport> {
    solve_with(
        model,
        z,
        &SolveOptions {
            tol,
            ..SolveOptions::default()
        },
    )
}

/// Bisects on `g` over `[min c, max c]` using the sign of `h*_g(z)`, reports
/// the upper (member) endpoint together with its first-passage values, and
/// extracts a policy attaining the optimality equation there.
pub fn solve_with(model: &CtmdpModel, z: usize, opts: &SolveOptions) -> Result<SolveReport> {
    model.ensure_valid()?;
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let n = model.n_states();
    if z >= n {
        return Err(Error::InvalidArgument(format!(
            "reference state {z} out of range"
        )));
    }

    let finish = |g_star: f64, h_star: Vec<f64>, trace: Vec<(f64, f64)>, iterations: usize| {
        let (policy, residual_op) = extract_policy(model, g_star, &h_star);
        SolveReport {
            g_star,
            residual_hz: h_star[z].abs(),
            h_star,
            policy,
            residual_op,
            bracket_trace: trace,
            z,
            iterations,
            lambda: model.lambda,
        }
    };

    let (mut lo, mut hi) = (model.min_cost(), model.max_cost());
    if n == 1 {
        let a = argmin_lowest(model.costs[0].iter().copied());
        return Ok(finish(model.cost(0, a), vec![0.0], Vec::new(), 0));
    }
    if lo == hi {
        return Ok(finish(hi, vec![0.0; n], vec![(lo, hi)], 0));
    }

    let mut inner = opts.inner.clone();
    let mut trace = vec![(lo, hi)];

    let (top, mut hi_sol) = membership_in_g_with(model, hi, z, &inner)?;
    if !top.in_g() {
        return Err(Error::BracketInvalid(format!(
            "h*_g(z) > 0 at g = max c = {hi}"
        )));
    }
    inner.warm_start = Some(hi_sol.policy.clone());
    let (bottom, lo_sol) = membership_in_g_with(model, lo, z, &inner)?;
    if bottom.in_g() {
        // The optimum sits at the cheapest cost rate.
        trace.push((lo, lo));
        return Ok(finish(lo, member_values(&lo_sol)?, trace, 0));
    }

    let mut iterations = 0;
    while hi - lo >= opts.tol && iterations < opts.max_bisections {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let (sign, sol) = membership_in_g_with(model, mid, z, &inner)?;
        if sign.in_g() {
            hi = mid;
            inner.warm_start = Some(sol.policy.clone());
            hi_sol = sol;
        } else {
            lo = mid;
        }
        trace.push((lo, hi));
        log::trace!("bisection step {iterations}: [{lo}, {hi}]");
    }
    Ok(finish(hi, member_values(&hi_sol)?, trace, iterations))
}

fn member_values(sol: &FirstPassageSolution) -> Result<Vec<f64>> {
    if sol.finite {
        Ok(sol.h.clone())
    } else {
        Err(Error::BracketInvalid(format!(
            "member g = {} has divergent first-passage values",
            sol.g
        )))
    }
}

/// Per-state minimizer of `λc(i,a)·x(i) + Σ_j x(j)·q(j|i,a)` with
/// `x = e^{λh}`, and the sup-norm relative gap to `λg·x(i)`.
pub fn extract_policy(model: &CtmdpModel, g: f64, h: &[f64]) -> (DetPolicy, f64) {
    let lambda = model.lambda;
    let x: Vec<f64> = h.iter().map(|v| (lambda * v).exp()).collect();
    let mut choice = Vec::with_capacity(model.n_states());
    let mut residual = 0.0_f64;
    for i in 0..model.n_states() {
        let vals: Vec<f64> = (0..model.n_actions(i))
            .map(|a| op_rhs(model, &x, i, a))
            .collect();
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let band = min + TIE_TOL * min.abs().max(lambda * x[i]);
        let a = vals.iter().position(|&v| v <= band).unwrap_or(0);
        choice.push(a);

        let scale = lambda * g.abs() * x[i]
            + x[i] * (lambda * model.cost(i, a).abs() + model.rate(i, a, i).abs())
            + (0..model.n_states())
                .filter(|&j| j != i)
                .map(|j| x[j] * model.rate(i, a, j))
                .sum::<f64>();
        let gap = (lambda * g * x[i] - vals[a]).abs();
        residual = residual.max(if scale > 0.0 { gap / scale } else { gap });
    }
    (DetPolicy(choice), residual)
}

fn op_rhs(model: &CtmdpModel, x: &[f64], i: usize, a: usize) -> f64 {
    let flow: f64 = model.rates[i][a].iter().zip(x).map(|(q, v)| q * v).sum();
    model.lambda * model.cost(i, a) * x[i] + flow
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMethod {
    Spectral,
    MonteCarlo,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum EvalDetails {
    Spectral {
        iterations: usize,
        /// Collatz–Wielandt bounds on the value at termination.
        lower: f64,
        upper: f64,
    },
    MonteCarlo(McEstimate),
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub policy: DetPolicy,
    pub value: f64,
    pub method: EvalMethod,
    pub details: EvalDetails,
}

/// Risk-sensitive average cost of `f` as `ρ(Q_f + λ diag(c_f)) / λ`.
pub fn policy_value_spectral(model: &CtmdpModel, f: &DetPolicy) -> Result<EvalReport> {
    f.check(model)?;
    if !irreducible_under(model, f) {
        return Err(Error::NotIrreducible);
    }
    let (value, details) = chain_value_spectral(&induced_det(model, f), model.lambda)?;
    Ok(EvalReport {
        policy: f.clone(),
        value,
        method: EvalMethod::Spectral,
        details,
    })
}

/// Perron root of `Q + λ diag(c)` divided by `λ`, for an irreducible chain.
///
/// Power iteration runs on the shifted nonnegative matrix
/// `Q + λ diag(c) + sI`, whose diagonal is positive, so the iteration is
/// primitive; convergence is judged by the gap between the Collatz–Wielandt
/// lower and upper bounds.
pub fn chain_value_spectral(chain: &InducedChain, lambda: f64) -> Result<(f64, EvalDetails)> {
    let n = chain.costs.len();
    let shift = 1.0
        + (0..n)
            .map(|i| lambda * chain.costs[i].abs() + chain.generator[i][i].abs())
            .fold(0.0, f64::max);
    let mut b = chain.generator.clone();
    for (i, row) in b.iter_mut().enumerate() {
        row[i] += lambda * chain.costs[i] + shift;
    }

    let mut v = vec![1.0; n];
    for iter in 1..=POWER_MAX_ITER {
        let w: Vec<f64> = b
            .iter()
            .map(|row| row.iter().zip(&v).map(|(m, x)| m * x).sum())
            .collect();
        let (mut lower, mut upper) = (f64::INFINITY, f64::NEG_INFINITY);
        for (wi, vi) in w.iter().zip(&v) {
            let r = wi / vi;
            lower = lower.min(r);
            upper = upper.max(r);
        }
        let top = w.iter().copied().fold(0.0, f64::max);
        v = w.iter().map(|x| x / top).collect();
        if upper - lower <= POWER_TOL * upper.abs().max(1.0) {
            let rho = 0.5 * (lower + upper);
            return Ok((
                (rho - shift) / lambda,
                EvalDetails::Spectral {
                    iterations: iter,
                    lower: (lower - shift) / lambda,
                    upper: (upper - shift) / lambda,
                },
            ));
        }
    }
    Err(Error::NoConvergence(POWER_MAX_ITER))
}

/// Outcome of exhaustive enumeration.
#[derive(Debug, Clone, Serialize)]
pub struct BruteForceResult {
    pub policy: DetPolicy,
    pub value: f64,
    pub evaluated: usize,
    /// Policies skipped because their chain is not irreducible.
    pub skipped: Vec<DetPolicy>,
}

/// Minimum spectral value over all deterministic stationary policies.
/// Exact ties go to the lexicographically smallest policy.
pub fn brute_force_optimal(model: &CtmdpModel) -> Result<BruteForceResult> {
    let count = model.policy_count();
    if count > MAX_ENUMERATED_POLICIES {
        return Err(Error::PolicySpaceTooLarge(count));
    }
    let policies: Vec<DetPolicy> = DetPolicy::enumerate(model).collect();
    let values: Vec<Option<Result<f64>>> = policies
        .par_iter()
        .map(|f| {
            irreducible_under(model, f).then(|| policy_value_spectral(model, f).map(|r| r.value))
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    let mut skipped = Vec::new();
    let mut evaluated = 0;
    for (k, v) in values.into_iter().enumerate() {
        match v {
            None => skipped.push(policies[k].clone()),
            Some(v) => {
                let v = v?;
                evaluated += 1;
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((k, v));
                }
            }
        }
    }
    let (k, value) = best.ok_or(Error::NotIrreducible)?;
    Ok(BruteForceResult {
        policy: policies[k].clone(),
        value,
        evaluated,
        skipped,
    })
}

/// Stationary distribution of the chain under `f`.
pub fn stationary_distribution(model: &CtmdpModel, f: &DetPolicy) -> Result<Vec<f64>> {
    f.check(model)?;
    if !irreducible_under(model, f) {
        return Err(Error::NotIrreducible);
    }
    chain_stationary_distribution(&induced_det(model, f))
}

/// Solves `π Q = 0`, `Σπ = 1` for an irreducible generator.
pub fn chain_stationary_distribution(chain: &InducedChain) -> Result<Vec<f64>> {
    let q = &chain.generator;
    let n = q.len();
    // Transposed balance equations with the last one replaced by Σπ = 1.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| q[i][j]).collect()).collect();
    a[n - 1] = vec![1.0; n];
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    solve_linear(&a, &b, 1e-8)
}

/// Expected (risk-neutral) long-run average cost `Σ_i π(i) c_f(i)`.
pub fn policy_value_risk_neutral(model: &CtmdpModel, f: &DetPolicy) -> Result<f64> {
    let pi = stationary_distribution(model, f)?;
    Ok((0..model.n_states())
        .map(|i| pi[i] * model.cost(i, f.action(i)))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::chain;

    fn golden(lambda: f64) -> CtmdpModel {
        chain(
            vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            vec![0.0, 1.0],
            lambda,
        )
    }

    #[test]
    fn golden_ratio_instance() {
        let expected = (5f64.sqrt() - 1.0) / 2.0;
        let r = solve(&golden(1.0), 0, DEFAULT_TOL).unwrap();
        assert!((r.g_star - expected).abs() < 1e-9, "{}", r.g_star);
        assert!(r.residual_hz < 1e-8);
        assert!(r.residual_op < 1e-8);
        let spectral = policy_value_spectral(&golden(1.0), &DetPolicy(vec![0, 0])).unwrap();
        assert!((spectral.value - expected).abs() < 1e-11);
    }

    #[test]
    fn small_lambda_approaches_risk_neutral() {
        let r = solve(&golden(1e-4), 0, DEFAULT_TOL).unwrap();
        assert!((r.g_star - 0.5).abs() < 1e-3, "{}", r.g_star);
    }

    #[test]
    fn constant_cost_is_exact() {
        let m = chain(vec![vec![-1.0, 1.0], vec![2.0, -2.0]], vec![0.7, 0.7], 1.3);
        let r = solve(&m, 1, DEFAULT_TOL).unwrap();
        assert_eq!(r.g_star, 0.7);
        assert_eq!(r.h_star, vec![0.0, 0.0]);
        assert!(r.residual_op < 1e-15);
        let v = policy_value_spectral(&m, &DetPolicy(vec![0, 0])).unwrap();
        assert!((v.value - 0.7).abs() < 1e-12);
        assert!(
            (policy_value_risk_neutral(&m, &DetPolicy(vec![0, 0])).unwrap() - 0.7).abs() < 1e-15
        );
    }

    #[test]
    fn single_state_closed_form() {
        let m = CtmdpModel {
            states: vec!["only".into()],
            actions: vec![vec!["x".into(), "y".into()]],
            rates: vec![vec![vec![0.0], vec![0.0]]],
            costs: vec![vec![2.0, 1.0]],
            lambda: 0.5,
        };
        let r = solve(&m, 0, DEFAULT_TOL).unwrap();
        assert_eq!(r.g_star, 1.0);
        assert_eq!(r.policy, DetPolicy(vec![1]));
        assert_eq!(r.residual_op, 0.0);
    }

    #[test]
    fn dominated_action_is_never_extracted() {
        let mut m = golden(1.0);
        m.actions[1].push("pricey".into());
        m.rates[1].push(vec![1.0, -1.0]);
        m.costs[1][0] = 0.6;
        m.costs[1].push(0.5);
        // Action 1 at state 1 has identical rates and lower cost.
        let (p, _) = extract_policy(&m, 0.3, &[0.0, 0.1]);
        assert_eq!(p.action(1), 1);
        let brute = brute_force_optimal(&m).unwrap();
        assert_eq!(brute.policy.action(1), 1);
        assert_eq!(brute.evaluated, 2);
    }

    #[test]
    fn extract_policy_single_action_reports_defect() {
        let m = golden(1.0);
        // h ≡ 0: right-hand side is λc(i); defect against λg·1 at g = 0.5.
        let (p, res) = extract_policy(&m, 0.5, &[0.0, 0.0]);
        assert_eq!(p, DetPolicy(vec![0, 0]));
        assert!(res > 0.1);
    }

    #[test]
    fn risk_neutral_balance() {
        let m = chain(vec![vec![-1.0, 1.0], vec![3.0, -3.0]], vec![0.0, 1.0], 1.0);
        let pi = stationary_distribution(&m, &DetPolicy(vec![0, 0])).unwrap();
        assert!((pi[0] - 0.75).abs() < 1e-15 && (pi[1] - 0.25).abs() < 1e-15);
        let v = policy_value_risk_neutral(&m, &DetPolicy(vec![0, 0])).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        assert!(
            (policy_value_risk_neutral(&golden(1.0), &DetPolicy(vec![0, 0])).unwrap() - 0.5).abs()
                < 1e-15
        );
    }

    #[test]
    fn evaluators_reject_reducible_policies() {
        let m = chain(vec![vec![-1.0, 1.0], vec![0.0, 0.0]], vec![0.0; 2], 1.0);
        let f = DetPolicy(vec![0, 0]);
        assert!(matches!(
            policy_value_spectral(&m, &f),
            Err(Error::NotIrreducible)
        ));
        assert!(matches!(
            policy_value_risk_neutral(&m, &f),
            Err(Error::NotIrreducible)
        ));
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            solve(&golden(1.0), 0, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            solve(&golden(1.0), 5, 1e-10),
            Err(Error::InvalidArgument(_))
        ));
        let bad = chain(vec![vec![-1.0, 0.5], vec![1.0, -1.0]], vec![0.0, 0.0], 1.0);
        assert!(matches!(solve(&bad, 0, 1e-10), Err(Error::InvalidModel(_))));
    }
}
