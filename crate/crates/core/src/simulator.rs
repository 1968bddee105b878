//! Seeded trajectory simulation and Monte Carlo estimators.
//!
//! Trajectories follow the direct (Gillespie) method on the policy-averaged
//! generator: hold for an `Exp(−q̄(i|i))` time, then jump to `j ≠ i` with
//! probability `−q̄(j|i)/q̄(i|i)`. Trajectory `k` of an estimator draws from
//! ChaCha stream `k` of the user seed, so results do not depend on how the
//! work is scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::average_solver::{EvalDetails, EvalMethod, EvalReport};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, Matrix};
use crate::model::{induced_generator, irreducible_under, CtmdpModel, DetPolicy, Policy};

/// Censoring fraction above which a first-passage estimate is flagged.
pub const CENSOR_FLAG_FRACTION: f64 = 1e-3;

/// Default first-passage cut-off, in units of the slowest mean holding time.
pub const DEFAULT_MAX_TIME_FACTOR: f64 = 1e6;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Averaged generator and cost rates of a stationary policy.
struct Dynamics {
    generator: Matrix,
    costs: Vec<f64>,
}

impl Dynamics {
    fn new(model: &CtmdpModel, policy: &Policy) -> Result<Self> {
        let chain = induced_generator(model, policy)?;
        Ok(Self {
            generator: chain.generator,
            costs: chain.costs,
        })
    }

    fn exit_rate(&self, i: usize) -> f64 {
        -self.generator[i][i]
    }

    /// Holding time in `i` and the successor state. `None` for an absorbing
    /// row, which only the single-state model has.
    fn step(&self, i: usize, rng: &mut ChaCha8Rng) -> Option<(f64, usize)> {
        let exit = self.exit_rate(i);
        if !(exit > 0.0) {
            return None;
        }
        let dt = Exp::new(exit).expect("positive rate").sample(rng);
        let target = rng.random::<f64>() * exit;
        let mut acc = 0.0;
        let mut last = i;
        for (j, &r) in self.generator[i].iter().enumerate() {
            if j == i || r <= 0.0 {
                continue;
            }
            acc += r;
            last = j;
            if target < acc {
                return Some((dt, j));
            }
        }
        // Rounding left `target` past the final cumulative rate.
        Some((dt, last))
    }
}

/// A simulated path on `[0, horizon]`.
///
/// `states[k]` is occupied on `[T_k, T_{k+1})` with `T_0 = 0` and
/// `T_{k+1} = jump_times[k]`; all jump times are below the horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub initial: usize,
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
    cost_rates: Vec<f64>,
}

impl Trajectory {
    fn segment_end(&self, k: usize) -> f64 {
        self.jump_times.get(k).copied().unwrap_or(self.horizon)
    }

    /// `∫_0^t c̄(ξ_s) ds` for `t` up to the horizon.
    pub fn cost_integral(&self, t: f64) -> f64 {
        let t = t.min(self.horizon);
        let mut start = 0.0;
        let mut total = 0.0;
        for (k, &s) in self.states.iter().enumerate() {
            if start >= t {
                break;
            }
            let end = self.segment_end(k).min(t);
            total += self.cost_rates[s] * (end - start);
            start = end;
        }
        total
    }

    /// First time at or after the first jump spent in `z`.
    pub fn tau(&self, z: usize) -> Option<f64> {
        self.states
            .iter()
            .skip(1)
            .position(|&s| s == z)
            .map(|k| self.jump_times[k])
    }

    /// Completed sojourns as `(state, duration)`; the final sojourn, cut by
    /// the horizon, is excluded.
    pub fn sojourns(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.jump_times.iter().enumerate().map(move |(k, &end)| {
            let start = if k == 0 { 0.0 } else { self.jump_times[k - 1] };
            (self.states[k], end - start)
        })
    }

    /// Observed jumps as `(from, to)`.
    pub fn jumps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.states.windows(2).map(|w| (w[0], w[1]))
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "horizon must be positive and finite, got {horizon}"
        )))
    }
}

fn check_state(model: &CtmdpModel, i: usize) -> Result<()> {
    if i < model.n_states() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("state {i} out of range")))
    }
}

pub fn simulate_trajectory(
    model: &CtmdpModel,
    policy: &Policy,
    i0: usize,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    check_horizon(horizon)?;
    check_state(model, i0)?;
    let dyn_ = Dynamics::new(model, policy)?;
    let mut rng = stream_rng(seed, 0);
    let mut jump_times = Vec::new();
    let mut states = vec![i0];
    let mut t = 0.0;
    let mut current = i0;
    while let Some((dt, next)) = dyn_.step(current, &mut rng) {
        t += dt;
        if t >= horizon {
            break;
        }
        jump_times.push(t);
        states.push(next);
        current = next;
    }
    Ok(Trajectory {
        initial: i0,
        jump_times,
        states,
        horizon,
        cost_rates: dyn_.costs,
    })
}

/// Monte Carlo estimate with reproducibility metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub point: f64,
    pub std_error: f64,
    pub n_trajectories: usize,
    pub horizon: f64,
    pub seed: u64,
    /// Trajectories dropped for exceeding the time cut-off.
    pub censored: usize,
    /// More than [`CENSOR_FLAG_FRACTION`] of trajectories were censored.
    pub censor_flag: bool,
}

/// `anchor + (1/κ) ln mean(e^{κ(v_k − anchor)})` with the max as anchor,
/// and a delta-method standard error for it.
fn log_mean_exp(values: &[f64], kappa: f64) -> (f64, f64) {
    let anchor = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = values.len() as f64;
    let y: Vec<f64> = values
        .iter()
        .map(|v| (kappa * (v - anchor)).exp())
        .collect();
    let mean = pairwise_sum(&y) / n;
    let sq: Vec<f64> = y.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if values.len() > 1 {
        pairwise_sum(&sq) / (n - 1.0)
    } else {
        0.0
    };
    let point = anchor + mean.ln() / kappa;
    let se = (var / n).sqrt() / mean / kappa;
    (point, se)
}

/// Estimate of `(1/(λT)) ln E exp(λ ∫_0^T c̄(ξ_t) dt)`.
pub fn estimate_average_cost(
    model: &CtmdpModel,
    policy: &Policy,
    i0: usize,
    horizon: f64,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_horizon(horizon)?;
    check_state(model, i0)?;
    if n < 2 {
        return Err(Error::InvalidArgument(
            "need at least two trajectories".into(),
        ));
    }
    let dyn_ = Dynamics::new(model, policy)?;
    // Time averages are accumulated as deviations from the starting cost
    // rate, which keeps constant-cost paths exact.
    let reference = dyn_.costs[i0];
    let averages: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let mut t = 0.0;
            let mut current = i0;
            let mut deviation = 0.0;
            loop {
                let (dt, next) = match dyn_.step(current, &mut rng) {
                    Some(step) => step,
                    None => (f64::INFINITY, current),
                };
                let stay = dt.min(horizon - t);
                deviation += (dyn_.costs[current] - reference) * stay;
                t += dt;
                if t >= horizon {
                    break;
                }
                current = next;
            }
            reference + deviation / horizon
        })
        .collect();

    let (point, se) = log_mean_exp(&averages, model.lambda * horizon);
    Ok(McEstimate {
        point,
        std_error: se,
        n_trajectories: n,
        horizon,
        seed,
        censored: 0,
        censor_flag: false,
    })
}

/// Monte Carlo counterpart of the spectral evaluator.
pub fn policy_value_monte_carlo(
    model: &CtmdpModel,
    f: &DetPolicy,
    i0: usize,
    horizon: f64,
    n: usize,
    seed: u64,
) -> Result<EvalReport> {
    let est = estimate_average_cost(
        model,
        &Policy::Deterministic(f.clone()),
        i0,
        horizon,
        n,
        seed,
    )?;
    Ok(EvalReport {
        policy: f.clone(),
        value: est.point,
        method: EvalMethod::MonteCarlo,
        details: EvalDetails::MonteCarlo(est),
    })
}

/// Default first-passage cut-off for a policy.
pub fn default_max_time(model: &CtmdpModel, f: &DetPolicy) -> f64 {
    let slowest = (0..model.n_states())
        .map(|i| -1.0 / model.rate(i, f.action(i), i))
        .fold(0.0, f64::max);
    DEFAULT_MAX_TIME_FACTOR * slowest
}

/// Estimate of `(1/λ) ln E_{i0} exp(λ ∫_0^{τ_z} (c − g) dt)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_first_passage(
    model: &CtmdpModel,
    f: &DetPolicy,
    g: f64,
    z: usize,
    i0: usize,
    n: usize,
    seed: u64,
    max_time: Option<f64>,
) -> Result<McEstimate> {
    f.check(model)?;
    check_state(model, z)?;
    check_state(model, i0)?;
    if model.n_states() < 2 {
        return Err(Error::InvalidArgument(
            "first passage needs at least two states".into(),
        ));
    }
    if !irreducible_under(model, f) {
        return Err(Error::NotIrreducible);
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "need at least two trajectories".into(),
        ));
    }
    let max_time = max_time.unwrap_or_else(|| default_max_time(model, f));
    check_horizon(max_time)?;
    let dyn_ = Dynamics::new(model, &Policy::Deterministic(f.clone()))?;

    let integrals: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let mut t = 0.0;
            let mut current = i0;
            let mut integral = 0.0;
            loop {
                let (dt, next) = dyn_.step(current, &mut rng)?;
                if t + dt > max_time {
                    return None;
                }
                integral += (dyn_.costs[current] - g) * dt;
                t += dt;
                current = next;
                if current == z {
                    return Some(integral);
                }
            }
        })
        .collect();

    let kept: Vec<f64> = integrals.iter().flatten().copied().collect();
    let censored = n - kept.len();
    if kept.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "all {n} trajectories exceeded max_time = {max_time}"
        )));
    }
    let (point, se) = log_mean_exp(&kept, model.lambda);
    Ok(McEstimate {
        point,
        std_error: se,
        n_trajectories: n,
        horizon: max_time,
        seed,
        censored,
        censor_flag: censored as f64 > CENSOR_FLAG_FRACTION * n as f64,
    })
}
