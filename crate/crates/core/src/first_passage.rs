//! Risk-sensitive first-passage values.
//!
//! For a candidate rate `g` and reference state `z`, the first-passage value
//! of state `i` under policy `f` is
//!
//! ```text
//! h_g(i, f) = (1/λ) ln E_i^f [ exp(λ ∫_0^{τ_z} (c(ξ_t, f) − g) dt) ]
//! ```
//!
//! where `τ_z` is the first time at or after the first jump that the chain
//! sits in `z`. All arithmetic happens on `x = e^{λh}`, in which the
//! first-passage equations are linear for a fixed policy and min-linear for
//! the optimal problem. Divergent expectations are represented by
//! `f64::INFINITY`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{solve_linear, transitive_closure};
use crate::model::{irreducible_under, CtmdpModel, DetPolicy};

/// Relative residual above which a linear solve is rejected.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

/// Relative band within which two candidate values count as tied.
const TIE_TOL: f64 = 1e-12;

/// Values of `x` beyond this are treated as divergent during value sweeps.
const DIVERGENCE_LEVEL: f64 = 1e300;

/// Minimum per-sweep growth factor accepted as a divergence certificate.
const GROWTH_FACTOR: f64 = 1.0 + 1e-9;

/// Sweeps between divergence-certificate checks.
const CERTIFICATE_PERIOD: usize = 8;

/// Product on the extended half-line with `0·∞ := 0`.
#[inline]
pub fn ext_mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// The holding-time integral `∫_0^∞ exp((λ(c(i,a) − g) + q(i|i,a)) s) ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QFactor {
    pub value: f64,
    pub finite: bool,
}

pub fn q_factor(model: &CtmdpModel, state: usize, action: usize, g: f64) -> QFactor {
    q_factor_raw(
        model.lambda,
        model.cost(state, action),
        model.rate(state, action, state),
        g,
    )
}

#[inline]
fn q_factor_raw(lambda: f64, cost: f64, diag: f64, g: f64) -> QFactor {
    let exponent = lambda * (cost - g) + diag;
    if exponent < 0.0 {
        QFactor {
            value: 1.0 / (lambda * g - lambda * cost - diag),
            finite: true,
        }
    } else {
        QFactor {
            value: f64::INFINITY,
            finite: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionStatus {
    /// `x` is the exact minimal solution (possibly with infinite entries).
    Exact,
    /// No policy with finite values exists; `x` holds a divergent iterate.
    Divergent,
    /// Early stop: `x` is a certified lower bound and `x[z] > 1`.
    LowerBound,
}

/// Result of a first-passage computation for one `(g, z)` pair.
#[derive(Debug, Clone, Serialize)]
pub struct FirstPassageSolution {
    pub g: f64,
    pub z: usize,
    /// `x[i] = e^{λ h(i)}`, `f64::INFINITY` where the expectation diverges.
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub policy: DetPolicy,
    pub finite: bool,
    pub status: SolutionStatus,
    pub iterations: usize,
}

impl FirstPassageSolution {
    fn new(
        model: &CtmdpModel,
        g: f64,
        z: usize,
        x: Vec<f64>,
        policy: DetPolicy,
        status: SolutionStatus,
        iterations: usize,
    ) -> Self {
        let h = x.iter().map(|v| v.ln() / model.lambda).collect();
        let finite = x.iter().all(|v| v.is_finite());
        Self {
            g,
            z,
            x,
            h,
            policy,
            finite,
            status,
            iterations,
        }
    }

    /// Indices of states whose value diverges.
    pub fn divergent_states(&self) -> Vec<usize> {
        (0..self.x.len())
            .filter(|&i| !self.x[i].is_finite())
            .collect()
    }
}

/// Value of `x` at `i ≠ z` implied by action `a` and the current values
/// `x[j]` for `j ∉ {i, z}` (the passage ends with value 1 on reaching `z`).
fn transient_candidate(model: &CtmdpModel, x: &[f64], g: f64, z: usize, i: usize, a: usize) -> f64 {
    let q = q_factor(model, i, a, g);
    let row = &model.rates[i][a];
    let mut inflow = row[z];
    for (j, &rate) in row.iter().enumerate() {
        if j != i && j != z {
            inflow += ext_mul(x[j], rate);
        }
    }
    ext_mul(q.value, inflow)
}

/// Value of `x[z]` under action `a` at `z`.
fn anchor_candidate(model: &CtmdpModel, x: &[f64], g: f64, z: usize, a: usize) -> f64 {
    let q = q_factor(model, z, a, g);
    let row = &model.rates[z][a];
    let inflow: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != z)
        .map(|(j, &rate)| ext_mul(x[j], rate))
        .sum();
    ext_mul(q.value, inflow)
}

fn candidate(model: &CtmdpModel, x: &[f64], g: f64, z: usize, i: usize, a: usize) -> f64 {
    if i == z {
        anchor_candidate(model, x, g, z, a)
    } else {
        transient_candidate(model, x, g, z, i, a)
    }
}

/// Lowest action index whose candidate is within the tie band of the minimum.
/// Returns the minimum as well.
fn best_action(model: &CtmdpModel, x: &[f64], g: f64, z: usize, i: usize) -> (usize, f64) {
    let vals: Vec<f64> = (0..model.n_actions(i))
        .map(|a| candidate(model, x, g, z, i, a))
        .collect();
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return (0, min);
    }
    let band = min + TIE_TOL * min.abs();
    let a = vals.iter().position(|&v| v <= band).unwrap_or(0);
    (a, min)
}

/// Every state other than `z` reaches `z` under `f`.
fn reaches_anchor(model: &CtmdpModel, f: &DetPolicy, z: usize) -> bool {
    let n = model.n_states();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| i != j && model.rate(i, f.action(i), j) > 0.0)
                .collect()
        })
        .collect();
    let reach = transitive_closure(&adj);
    (0..n).all(|i| i == z || reach[i][z])
}

/// Exact first-passage values at every `i ≠ z` for a fixed policy; `x[z]` is
/// left at 1 (the terminal value).
///
/// Divergence is decided structurally: a strongly connected block of the
/// killed chain is convergent iff its coefficient matrix is a nonsingular
/// M-matrix, checked by solving against the all-ones vector; a state
/// diverges iff it can reach a divergent block.
fn evaluate_transient(model: &CtmdpModel, f: &DetPolicy, g: f64, z: usize) -> Result<Vec<f64>> {
    let n = model.n_states();
    let lambda = model.lambda;
    let others: Vec<usize> = (0..n).filter(|&i| i != z).collect();

    let rate = |i: usize, j: usize| model.rate(i, f.action(i), j);
    let diag: Vec<f64> = (0..n)
        .map(|i| lambda * g - lambda * model.cost(i, f.action(i)) - rate(i, i))
        .collect();

    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| i != z && j != z && i != j && rate(i, j) > 0.0)
                .collect()
        })
        .collect();
    let reach = transitive_closure(&adj);
    let same_block = |i: usize, j: usize| i == j || (reach[i][j] && reach[j][i]);

    let mut bad = vec![false; n];
    let mut seen = vec![false; n];
    for &root in &others {
        if seen[root] {
            continue;
        }
        let block: Vec<usize> = others
            .iter()
            .copied()
            .filter(|&j| same_block(root, j))
            .collect();
        block.iter().for_each(|&j| seen[j] = true);
        let divergent = if block.iter().any(|&i| diag[i] <= 0.0) {
            true
        } else if block.len() == 1 {
            false
        } else {
            let a: Vec<Vec<f64>> = block
                .iter()
                .map(|&i| {
                    block
                        .iter()
                        .map(|&j| if i == j { diag[i] } else { -rate(i, j) })
                        .collect()
                })
                .collect();
            match solve_linear(&a, &vec![1.0; block.len()], SOLVE_RESIDUAL_TOL) {
                Ok(y) => y.iter().any(|&v| !(v > 0.0)),
                Err(Error::Singular) | Err(Error::IllConditioned { .. }) => true,
                Err(e) => return Err(e),
            }
        };
        if divergent {
            block.iter().for_each(|&j| bad[j] = true);
        }
    }

    let diverges = |i: usize| bad[i] || others.iter().any(|&j| bad[j] && reach[i][j]);
    let finite_set: Vec<usize> = others.iter().copied().filter(|&i| !diverges(i)).collect();

    let mut x = vec![f64::INFINITY; n];
    x[z] = 1.0;
    if !finite_set.is_empty() {
        let a: Vec<Vec<f64>> = finite_set
            .iter()
            .map(|&i| {
                finite_set
                    .iter()
                    .map(|&j| if i == j { diag[i] } else { -rate(i, j) })
                    .collect()
            })
            .collect();
        let b: Vec<f64> = finite_set.iter().map(|&i| rate(i, z)).collect();
        let sol = solve_linear(&a, &b, SOLVE_RESIDUAL_TOL)?;
        for (k, &i) in finite_set.iter().enumerate() {
            // A state that never reaches z has no finite passage value.
            x[i] = if sol[k] > 0.0 && sol[k].is_finite() {
                sol[k]
            } else {
                f64::INFINITY
            };
        }
    }
    Ok(x)
}

fn check_common(model: &CtmdpModel, z: usize) -> Result<()> {
    if model.n_states() < 2 {
        return Err(Error::InvalidArgument(
            "first-passage values need at least two states".into(),
        ));
    }
    if z >= model.n_states() {
        return Err(Error::InvalidArgument(format!(
            "reference state {z} out of range"
        )));
    }
    Ok(())
}

/// First-passage values `h_g(·, f)` of a fixed policy.
pub fn first_passage_value(
    model: &CtmdpModel,
    f: &DetPolicy,
    g: f64,
    z: usize,
) -> Result<FirstPassageSolution> {
    check_common(model, z)?;
    f.check(model)?;
    if !irreducible_under(model, f) {
        return Err(Error::NotIrreducible);
    }
    let mut x = evaluate_transient(model, f, g, z)?;
    x[z] = anchor_candidate(model, &x, g, z, f.action(z));
    Ok(FirstPassageSolution::new(
        model,
        g,
        z,
        x,
        f.clone(),
        SolutionStatus::Exact,
        1,
    ))
}

/// Knobs for [`optimal_first_passage`].
#[derive(Debug, Clone)]
pub struct FirstPassageOptions {
    /// Cap on policy-iteration updates.
    pub max_policy_updates: usize,
    /// Cap on value sweeps used to locate a first policy with finite values.
    pub max_value_sweeps: usize,
    /// Policy tried first (e.g. the optimizer at a nearby `g`).
    pub warm_start: Option<DetPolicy>,
    /// Stop as soon as `x[z] > 1` is certified by a lower bound.
    pub stop_outside_g: bool,
}

impl Default for FirstPassageOptions {
    fn default() -> Self {
        Self {
            max_policy_updates: 1000,
            max_value_sweeps: 100_000,
            warm_start: None,
            stop_outside_g: false,
        }
    }
}

/// Optimal first-passage values `h*_g` and a minimizing policy.
pub fn optimal_first_passage(model: &CtmdpModel, g: f64, z: usize) -> Result<FirstPassageSolution> {
    optimal_first_passage_with(model, g, z, &FirstPassageOptions::default())
}

pub fn optimal_first_passage_with(
    model: &CtmdpModel,
    g: f64,
    z: usize,
    opts: &FirstPassageOptions,
) -> Result<FirstPassageSolution> {
    check_common(model, z)?;
    if let Some(w) = &opts.warm_start {
        w.check(model)?;
    }

    let mut sweeps = 0;
    let start = match initial_policy(model, g, z, opts) {
        Some(f) => f,
        None => match search_by_value_sweeps(model, g, z, opts, &mut sweeps)? {
            Search::Found(f) => f,
            Search::Stopped(sol) => return Ok(sol),
        },
    };
    policy_iteration(model, g, z, start, opts, sweeps)
}

fn is_proper(model: &CtmdpModel, f: &DetPolicy, g: f64, z: usize) -> Result<Option<Vec<f64>>> {
    if !reaches_anchor(model, f, z) {
        return Ok(None);
    }
    let x = evaluate_transient(model, f, g, z)?;
    Ok(x.iter().all(|v| v.is_finite()).then_some(x))
}

fn initial_policy(
    model: &CtmdpModel,
    g: f64,
    z: usize,
    opts: &FirstPassageOptions,
) -> Option<DetPolicy> {
    let candidates = opts
        .warm_start
        .iter()
        .cloned()
        .chain(std::iter::once(DetPolicy::cheapest(model)));
    for f in candidates {
        if let Ok(Some(_)) = is_proper(model, &f, g, z) {
            return Some(f);
        }
    }
    None
}

enum Search {
    Found(DetPolicy),
    Stopped(FirstPassageSolution),
}

/// Monotone value sweeps from `x = 0`, which increase to the optimal values.
/// The greedy policy is tested for finiteness whenever it changes; the sweep
/// also yields lower bounds, so `x[z] > 1` or runaway growth is certified.
fn search_by_value_sweeps(
    model: &CtmdpModel,
    g: f64,
    z: usize,
    opts: &FirstPassageOptions,
    sweeps: &mut usize,
) -> Result<Search> {
    let n = model.n_states();
    let mut x = vec![0.0; n];
    x[z] = 1.0;
    let mut last_tested: Option<DetPolicy> = None;

    while *sweeps < opts.max_value_sweeps {
        *sweeps += 1;
        let mut next = x.clone();
        let mut greedy = vec![0; n];
        for i in (0..n).filter(|&i| i != z) {
            let (a, v) = best_action(model, &x, g, z, i);
            greedy[i] = a;
            next[i] = v;
        }
        let (az, xz) = best_action(model, &next, g, z, z);
        greedy[z] = az;
        let greedy = DetPolicy(greedy);

        let runaway = next.iter().any(|&v| !(v < DIVERGENCE_LEVEL));
        if runaway || (opts.stop_outside_g && xz > 1.0) {
            let status = if runaway {
                for v in next.iter_mut() {
                    if !(*v < DIVERGENCE_LEVEL) {
                        *v = f64::INFINITY;
                    }
                }
                SolutionStatus::Divergent
            } else {
                SolutionStatus::LowerBound
            };
            next[z] = if runaway { f64::INFINITY } else { xz };
            return Ok(Search::Stopped(FirstPassageSolution::new(
                model, g, z, next, greedy, status, *sweeps,
            )));
        }

        if sweeps.is_multiple_of(CERTIFICATE_PERIOD) {
            if let Some(support) = growth_certificate(model, &next, g, z) {
                let x = divergent_closure(model, next, &support, g, z);
                return Ok(Search::Stopped(FirstPassageSolution::new(
                    model,
                    g,
                    z,
                    x,
                    greedy,
                    SolutionStatus::Divergent,
                    *sweeps,
                )));
            }
        }

        if last_tested.as_ref() != Some(&greedy) {
            if is_proper(model, &greedy, g, z)?.is_some() {
                return Ok(Search::Found(greedy));
            }
            last_tested = Some(greedy);
        }

        let change = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let size = next.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        x = next;
        if change <= 1e-15 * size {
            // Converged without a finite greedy policy; only a degenerate
            // boundary instance gets here.
            break;
        }
    }
    Err(Error::IterationLimit(*sweeps))
}

/// Looks for a set `S` of transient states and `v = x|_S` with
/// `min_a Q_i(a) Σ_{j∈S, j≠i} v_j q(j|i,a) ≥ r v_i` on `S` for some `r > 1`.
/// The homogeneous part of the sweep then grows at least like `r^k` on `S`,
/// so every state in `S` has an infinite optimal value.
fn growth_certificate(model: &CtmdpModel, x: &[f64], g: f64, z: usize) -> Option<Vec<bool>> {
    let n = model.n_states();
    let mut support: Vec<bool> = (0..n)
        .map(|i| i != z && x[i] > 0.0 && x[i].is_finite())
        .collect();
    loop {
        let v: Vec<f64> = (0..n)
            .map(|j| if support[j] { x[j] } else { 0.0 })
            .collect();
        let mut removed = false;
        for i in 0..n {
            if !support[i] {
                continue;
            }
            let grown = (0..model.n_actions(i))
                .map(|a| {
                    let inflow: f64 = model.rates[i][a]
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i && j != z)
                        .map(|(j, &rate)| ext_mul(v[j], rate))
                        .sum();
                    ext_mul(q_factor(model, i, a, g).value, inflow)
                })
                .fold(f64::INFINITY, f64::min);
            if !(grown >= GROWTH_FACTOR * v[i]) {
                support[i] = false;
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    support.iter().any(|&s| s).then_some(support)
}

/// Marks `support` as divergent, then every transient state all of whose
/// actions lead into divergent states, and finally `z`, which every
/// irreducible policy connects to each state before returning.
fn divergent_closure(
    model: &CtmdpModel,
    mut x: Vec<f64>,
    support: &[bool],
    g: f64,
    z: usize,
) -> Vec<f64> {
    let n = model.n_states();
    for i in (0..n).filter(|&i| support[i]) {
        x[i] = f64::INFINITY;
    }
    loop {
        let mut changed = false;
        for i in 0..n {
            if i == z || !x[i].is_finite() {
                continue;
            }
            let (_, v) = best_action(model, &x, g, z, i);
            if !v.is_finite() {
                x[i] = f64::INFINITY;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    x[z] = f64::INFINITY;
    x
}

fn policy_iteration(
    model: &CtmdpModel,
    g: f64,
    z: usize,
    start: DetPolicy,
    opts: &FirstPassageOptions,
    sweeps: usize,
) -> Result<FirstPassageSolution> {
    let n = model.n_states();
    let mut f = start;
    let mut prev_x: Option<Vec<f64>> = None;

    for update in 0..opts.max_policy_updates {
        let x = match is_proper(model, &f, g, z)? {
            Some(x) => x,
            None if !reaches_anchor(model, &f, z) => return Err(Error::NotIrreducible),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "policy iteration produced a divergent policy at g = {g}"
                )))
            }
        };

        let mut next = f.clone();
        for i in 0..n {
            let (a, _) = best_action(model, &x, g, z, i);
            next.0[i] = a;
        }

        let small_change = prev_x.as_ref().is_some_and(|p| {
            let change = p
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let size = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            change < 1e-12 * size
        });
        let same_on_transient = (0..n).all(|i| i == z || next.action(i) == f.action(i));

        if same_on_transient || small_change {
            let mut x = x;
            let mut policy = f;
            policy.0[z] = next.action(z);
            x[z] = anchor_candidate(model, &x, g, z, policy.action(z));
            return Ok(FirstPassageSolution::new(
                model,
                g,
                z,
                x,
                policy,
                SolutionStatus::Exact,
                sweeps + update + 1,
            ));
        }
        prev_x = Some(x);
        f = next;
    }
    Err(Error::IterationLimit(opts.max_policy_updates))
}

/// Sign of `h*_g(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Negative,
    Zero,
    Positive,
}

impl Membership {
    /// `g` belongs to `G = {g : h*_g(z) ≤ 0}`.
    pub fn in_g(self) -> bool {
        !matches!(self, Membership::Positive)
    }
}

/// Classifies `h*_g(z)` by comparing `x[z]` with 1, no tolerance.
pub fn membership_in_g(
    model: &CtmdpModel,
    g: f64,
    z: usize,
) -> Result<(Membership, FirstPassageSolution)> {
    membership_in_g_with(model, g, z, &FirstPassageOptions::default())
}

pub fn membership_in_g_with(
    model: &CtmdpModel,
    g: f64,
    z: usize,
    opts: &FirstPassageOptions,
) -> Result<(Membership, FirstPassageSolution)> {
    let sol = optimal_first_passage_with(model, g, z, opts)?;
    let xz = sol.x[z];
    let sign = if sol.status != SolutionStatus::Exact || !(xz <= 1.0) {
        Membership::Positive
    } else if xz < 1.0 {
        Membership::Negative
    } else {
        Membership::Zero
    };
    Ok((sign, sol))
}
