//! Decision model, stationary policies and policy-induced generators.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{strongly_connected, Matrix};

/// Tolerance on generator row sums accepted by [`validate_model`].
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Above this value of `λ·max|c|` the exponential transform risks overflow.
pub const OVERFLOW_WARN_LEVEL: f64 = 200.0;

/// A finite continuous-time MDP with a risk-sensitivity coefficient.
///
/// `rates[i][a][j]` is the transition rate from `i` to `j` under action `a`
/// (the diagonal holds minus the total exit rate) and `costs[i][a]` is the
/// cost per unit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtmdpModel {
    pub states: Vec<String>,
    pub actions: Vec<Vec<String>>,
    pub rates: Vec<Vec<Vec<f64>>>,
    pub costs: Vec<Vec<f64>>,
    pub lambda: f64,
}

impl CtmdpModel {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self, state: usize) -> usize {
        self.actions[state].len()
    }

    #[inline]
    pub fn rate(&self, from: usize, action: usize, to: usize) -> f64 {
        self.rates[from][action][to]
    }

    #[inline]
    pub fn cost(&self, state: usize, action: usize) -> f64 {
        self.costs[state][action]
    }

    pub fn min_cost(&self) -> f64 {
        self.costs
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_cost(&self) -> f64 {
        self.costs
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Number of deterministic stationary policies, as a float so that huge
    /// action spaces do not overflow.
    pub fn policy_count(&self) -> f64 {
        self.actions.iter().map(|a| a.len() as f64).product()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    pub fn action_index(&self, state: usize, label: &str) -> Option<usize> {
        self.actions.get(state)?.iter().position(|a| a == label)
    }

    /// Copy of the model with a different risk coefficient.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    /// Copy of the model with every cost shifted by `offset`.
    pub fn with_cost_offset(&self, offset: f64) -> Self {
        let mut out = self.clone();
        out.costs.iter_mut().flatten().for_each(|c| *c += offset);
        out
    }

    /// Warnings that do not invalidate the model.
    pub fn warnings(&self) -> Vec<String> {
        let max_abs = self
            .costs
            .iter()
            .flatten()
            .fold(0.0_f64, |m, c| m.max(c.abs()));
        let mut out = Vec::new();
        if self.lambda * max_abs > OVERFLOW_WARN_LEVEL {
            out.push(format!(
                "lambda*max|c| = {:.3e} exceeds {OVERFLOW_WARN_LEVEL}; exponential values may overflow",
                self.lambda * max_abs
            ));
        }
        out
    }

    pub fn validate(&self) -> ValidationReport {
        validate_model(self)
    }

    /// Fails with [`Error::InvalidModel`] listing every violation.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.ok {
            Ok(())
        } else {
            let msg = report
                .violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::InvalidModel(msg))
        }
    }
}

/// A choice of action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetPolicy(pub Vec<usize>);

impl DetPolicy {
    pub fn new(choice: Vec<usize>) -> Self {
        Self(choice)
    }

    pub fn choice(&self) -> &[usize] {
        &self.0
    }

    pub fn action(&self, state: usize) -> usize {
        self.0[state]
    }

    pub fn check(&self, model: &CtmdpModel) -> Result<()> {
        if self.0.len() != model.n_states() {
            return Err(Error::PolicyIncompatible(format!(
                "policy covers {} states, model has {}",
                self.0.len(),
                model.n_states()
            )));
        }
        for (i, &a) in self.0.iter().enumerate() {
            if a >= model.n_actions(i) {
                return Err(Error::PolicyIncompatible(format!(
                    "action index {a} out of range at state {i}"
                )));
            }
        }
        Ok(())
    }

    /// Per-state argmin of the cost rate, ties to the lowest action index.
    pub fn cheapest(model: &CtmdpModel) -> Self {
        Self(
            model
                .costs
                .iter()
                .map(|row| argmin_lowest(row.iter().copied()))
                .collect(),
        )
    }

    /// Iterates all deterministic policies in lexicographic order.
    pub fn enumerate(model: &CtmdpModel) -> impl Iterator<Item = DetPolicy> + '_ {
        let n = model.n_states();
        let mut next = Some(vec![0usize; n]);
        std::iter::from_fn(move || {
            let current = next.take()?;
            let mut succ = current.clone();
            for i in (0..n).rev() {
                succ[i] += 1;
                if succ[i] < model.n_actions(i) {
                    next = Some(succ);
                    break;
                }
                succ[i] = 0;
            }
            Some(DetPolicy(current))
        })
    }

    /// Labels `(state, action)` for reporting.
    pub fn labels(&self, model: &CtmdpModel) -> Vec<(String, String)> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &a)| (model.states[i].clone(), model.actions[i][a].clone()))
            .collect()
    }
}

/// Index of the smallest value; ties go to the lowest index.
pub(crate) fn argmin_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (k, v) in values.enumerate() {
        if v < best_val {
            best = k;
            best_val = v;
        }
    }
    best
}

/// Stationary randomized policy: `weights[i][a]` is the probability of
/// action `a` in state `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandStationaryPolicy {
    pub weights: Vec<Vec<f64>>,
}

impl RandStationaryPolicy {
    pub const ROW_TOL: f64 = 1e-12;

    pub fn check(&self, model: &CtmdpModel) -> Result<()> {
        if self.weights.len() != model.n_states() {
            return Err(Error::PolicyIncompatible(format!(
                "policy covers {} states, model has {}",
                self.weights.len(),
                model.n_states()
            )));
        }
        for (i, row) in self.weights.iter().enumerate() {
            if row.len() != model.n_actions(i) {
                return Err(Error::PolicyIncompatible(format!(
                    "state {i}: {} weights for {} actions",
                    row.len(),
                    model.n_actions(i)
                )));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::PolicyIncompatible(format!(
                    "state {i}: weights must be finite and nonnegative"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > Self::ROW_TOL {
                return Err(Error::PolicyIncompatible(format!(
                    "state {i}: weights sum to {total}, not 1"
                )));
            }
        }
        Ok(())
    }
}

/// Either kind of stationary policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Policy {
    Deterministic(DetPolicy),
    Randomized(RandStationaryPolicy),
}

impl From<DetPolicy> for Policy {
    fn from(p: DetPolicy) -> Self {
        Policy::Deterministic(p)
    }
}

impl From<RandStationaryPolicy> for Policy {
    fn from(p: RandStationaryPolicy) -> Self {
        Policy::Randomized(p)
    }
}

impl Policy {
    pub fn check(&self, model: &CtmdpModel) -> Result<()> {
        match self {
            Policy::Deterministic(p) => p.check(model),
            Policy::Randomized(p) => p.check(model),
        }
    }
}

/// Generator and cost-rate vector of the chain under a stationary policy.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedChain {
    pub generator: Matrix,
    pub costs: Vec<f64>,
}

/// `Q_f[i][j] = Σ_a w[i][a]·q(j|i,a)` and `c_f[i] = Σ_a w[i][a]·c(i,a)`.
pub fn induced_generator(model: &CtmdpModel, policy: &Policy) -> Result<InducedChain> {
    policy.check(model)?;
    let n = model.n_states();
    match policy {
        Policy::Deterministic(f) => Ok(induced_det(model, f)),
        Policy::Randomized(p) => {
            let mut generator = vec![vec![0.0; n]; n];
            let mut costs = vec![0.0; n];
            for i in 0..n {
                for (a, &w) in p.weights[i].iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        generator[i][j] += w * model.rate(i, a, j);
                    }
                    costs[i] += w * model.cost(i, a);
                }
                // Keep the row exactly conservative after averaging.
                let off: f64 = (0..n).filter(|&j| j != i).map(|j| generator[i][j]).sum();
                generator[i][i] = -off;
            }
            Ok(InducedChain { generator, costs })
        }
    }
}

/// Deterministic-policy fast path; the policy must already be checked.
pub(crate) fn induced_det(model: &CtmdpModel, f: &DetPolicy) -> InducedChain {
    let generator = (0..model.n_states())
        .map(|i| model.rates[i][f.action(i)].clone())
        .collect();
    let costs = (0..model.n_states())
        .map(|i| model.cost(i, f.action(i)))
        .collect();
    InducedChain { generator, costs }
}

fn positive_offdiag_graph(rows: impl Fn(usize, usize) -> bool, n: usize) -> Vec<Vec<bool>> {
    (0..n)
        .map(|i| (0..n).map(|j| i != j && rows(i, j)).collect())
        .collect()
}

/// True iff the jump graph of an induced chain is strongly connected.
pub fn chain_irreducible(chain: &InducedChain) -> bool {
    let n = chain.costs.len();
    strongly_connected(&positive_offdiag_graph(
        |i, j| chain.generator[i][j] > 0.0,
        n,
    ))
}

/// True iff the jump graph of the chain under `f` is strongly connected.
pub fn irreducible_under(model: &CtmdpModel, f: &DetPolicy) -> bool {
    let n = model.n_states();
    let adj = positive_offdiag_graph(|i, j| model.rate(i, f.action(i), j) > 0.0, n);
    strongly_connected(&adj)
}

/// One violated rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.rule, self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

pub fn validate_model(model: &CtmdpModel) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |rule: &str, location: String, message: String| {
        violations.push(Violation {
            rule: rule.to_string(),
            location,
            message,
        })
    };

    let n = model.n_states();
    if n == 0 {
        push("no_states", "states".into(), "model has no states".into());
    }
    if !(model.lambda.is_finite() && model.lambda > 0.0) {
        push(
            "lambda",
            "lambda".into(),
            format!(
                "risk coefficient must be finite and > 0, got {}",
                model.lambda
            ),
        );
    }
    if model.actions.len() != n || model.rates.len() != n || model.costs.len() != n {
        push(
            "shape",
            "model".into(),
            format!(
                "{} states but {} action lists, {} rate blocks, {} cost rows",
                n,
                model.actions.len(),
                model.rates.len(),
                model.costs.len()
            ),
        );
        return ValidationReport {
            ok: false,
            violations,
        };
    }

    let mut shape_ok = true;
    for i in 0..n {
        let m = model.actions[i].len();
        if m == 0 {
            push(
                "empty_actions",
                format!("state {}", model.states[i]),
                "action set is empty".into(),
            );
        }
        if model.rates[i].len() != m || model.costs[i].len() != m {
            push(
                "shape",
                format!("state {}", model.states[i]),
                format!(
                    "{m} actions but {} rate rows and {} costs",
                    model.rates[i].len(),
                    model.costs[i].len()
                ),
            );
            shape_ok = false;
            continue;
        }
        for a in 0..m {
            let loc = format!("state {}, action {}", model.states[i], model.actions[i][a]);
            let row = &model.rates[i][a];
            if row.len() != n {
                push(
                    "shape",
                    loc,
                    format!("rate row has {} entries, expected {n}", row.len()),
                );
                shape_ok = false;
                continue;
            }
            if !model.costs[i][a].is_finite() {
                push("non_finite", loc.clone(), "cost is not finite".into());
            }
            if row.iter().any(|v| !v.is_finite()) {
                push("non_finite", loc, "rate row has non-finite entries".into());
                continue;
            }
            for (j, &r) in row.iter().enumerate() {
                if j != i && r < 0.0 {
                    push(
                        "negative_rate",
                        loc.clone(),
                        format!("rate to {} is negative ({r})", model.states[j]),
                    );
                }
            }
            let sum: f64 = row.iter().sum();
            if row.iter().all(|&r| r >= 0.0) && (sum - 1.0).abs() <= 1e-9 && n >= 2 {
                push(
                    "probability_row",
                    loc.clone(),
                    "row looks like transition probabilities, expected rates".into(),
                );
            } else if sum.abs() > ROW_SUM_TOL {
                push("row_sum", loc.clone(), format!("row sum {sum:e} ≠ 0"));
            }
            if n >= 2 && row[i] >= 0.0 {
                push(
                    "absorbing_action",
                    loc,
                    "action has no exit rate (absorbing)".into(),
                );
            }
        }
    }

    if shape_ok && n >= 2 {
        let adj = positive_offdiag_graph(
            |i, j| (0..model.n_actions(i)).any(|a| model.rate(i, a, j) > 0.0),
            n,
        );
        if !strongly_connected(&adj) {
            push(
                "not_connected",
                "model".into(),
                "union transition graph is not strongly connected".into(),
            );
        }
    }

    ValidationReport {
        ok: violations.is_empty(),
        violations,
    }
}
