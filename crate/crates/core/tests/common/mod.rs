//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskctmdp::{CtmdpModel, DetPolicy};
use std::path::PathBuf;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

pub fn bundled(name: &str) -> CtmdpModel {
    riskctmdp::io::load_model(data_path(name)).unwrap().model
}

/// Single-action model from a generator and per-state costs.
pub fn chain(generator: Vec<Vec<f64>>, costs: Vec<f64>, lambda: f64) -> CtmdpModel {
    let n = generator.len();
    CtmdpModel {
        states: (0..n).map(|i| format!("s{i}")).collect(),
        actions: vec![vec!["a".to_string()]; n],
        rates: generator.into_iter().map(|r| vec![r]).collect(),
        costs: costs.into_iter().map(|c| vec![c]).collect(),
        lambda,
    }
}

/// Random dense instance: off-diagonal rates in `[0.1, 2]`, costs in
/// `[-1, 1]`.
pub fn random_instance(
    rng: &mut impl Rng,
    n: usize,
    max_actions: usize,
    lambda: f64,
) -> CtmdpModel {
    let mut actions = Vec::new();
    let mut rates = Vec::new();
    let mut costs = Vec::new();
    for i in 0..n {
        let m = rng.random_range(1..=max_actions);
        actions.push((0..m).map(|a| format!("a{a}")).collect());
        let mut block = Vec::new();
        let mut cost_row = Vec::new();
        for _ in 0..m {
            let mut row: Vec<f64> = (0..n)
                .map(|j| {
                    if j == i {
                        0.0
                    } else {
                        rng.random_range(0.1..=2.0)
                    }
                })
                .collect();
            row[i] = -row.iter().sum::<f64>();
            block.push(row);
            cost_row.push(rng.random_range(-1.0..=1.0));
        }
        rates.push(block);
        costs.push(cost_row);
    }
    CtmdpModel {
        states: (0..n).map(|i| format!("s{i}")).collect(),
        actions,
        rates,
        costs,
        lambda,
    }
}

/// The fixed set of 50 instances used by the oracle-equivalence criteria.
pub fn criterion_instances() -> Vec<CtmdpModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    (0..50)
        .map(|k| {
            let n = 2 + k % 3;
            let lambda = [0.5, 1.0, 2.0][(k / 3) % 3];
            random_instance(&mut rng, n, 3, lambda)
        })
        .collect()
}

/// Truncated first-passage expectation by enumerating every jump sequence
/// `i = i_0 → … → i_m = z` with `m ≤ max_jumps` and intermediate states
/// outside `z`. Each holding time `θ ~ Exp(ν)` contributes
/// `E[e^{aθ}] = ν/(ν − a)`, and each jump contributes `q(j|i)/ν`.
pub fn series_lower_bound(
    model: &CtmdpModel,
    f: &DetPolicy,
    g: f64,
    z: usize,
    start: usize,
    max_jumps: usize,
) -> f64 {
    fn walk(
        model: &CtmdpModel,
        f: &DetPolicy,
        g: f64,
        z: usize,
        state: usize,
        weight: f64,
        remaining: usize,
    ) -> f64 {
        if remaining == 0 {
            return 0.0;
        }
        let a = f.action(state);
        let nu = -model.rate(state, a, state);
        let growth = model.lambda * (model.cost(state, a) - g);
        if growth >= nu {
            return f64::INFINITY;
        }
        let mgf = nu / (nu - growth);
        let mut total = 0.0;
        for j in 0..model.n_states() {
            let q = model.rate(state, a, j);
            if j == state || q <= 0.0 {
                continue;
            }
            let w = weight * mgf * q / nu;
            if j == z {
                total += w;
            } else {
                total += walk(model, f, g, z, j, w, remaining - 1);
            }
        }
        total
    }
    walk(model, f, g, z, start, 1.0, max_jumps)
}

/// Principal eigenvalue of a 2×2 matrix with real spectrum.
pub fn principal_eigenvalue_2x2(m: [[f64; 2]; 2]) -> f64 {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    0.5 * (tr + (tr * tr - 4.0 * det).sqrt())
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let norm = a
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings);
    let mul = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| x[i][k] * y[k][j]).sum())
                    .collect()
            })
            .collect()
    };
    let scaled: Vec<Vec<f64>> = a
        .iter()
        .map(|r| r.iter().map(|v| v * scale).collect())
        .collect();
    let mut result: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut term = result.clone();
    for k in 1..=30 {
        term = mul(&term, &scaled);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = mul(&result, &result);
    }
    result
}

/// Exact finite-horizon value `(1/(λT)) ln (e_{i0}ᵀ exp(T(Q_f + λ diag(c_f))) 1)`.
pub fn finite_horizon_value(model: &CtmdpModel, f: &DetPolicy, i0: usize, horizon: f64) -> f64 {
    let n = model.n_states();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let act = f.action(i);
            (0..n)
                .map(|j| {
                    let mut v = model.rate(i, act, j);
                    if i == j {
                        v += model.lambda * model.cost(i, act);
                    }
                    horizon * v
                })
                .collect()
        })
        .collect();
    let e = expm(&a);
    e[i0].iter().sum::<f64>().ln() / (model.lambda * horizon)
}
