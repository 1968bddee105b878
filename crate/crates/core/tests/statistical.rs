mod common;

use common::*;
use riskctmdp::{
    estimate_average_cost, estimate_first_passage, first_passage_value, policy_value_risk_neutral,
    simulate_trajectory, CtmdpModel, DetPolicy, Policy,
};

fn within(estimate: f64, exact: f64, se: f64, k: f64) -> bool {
    (estimate - exact).abs() <= k * se
}

#[test]
fn matrix_exponential_oracle_matches_closed_form() {
    // exp(t [[-a, a], [b, -b]]) has a closed form.
    let (a, b, t) = (0.7, 1.3, 2.5);
    let e = expm(&[vec![-a * t, a * t], vec![b * t, -b * t]]);
    let s = a + b;
    let decay = (-s * t).exp();
    assert!((e[0][0] - (b + a * decay) / s).abs() <= 1e-13);
    assert!((e[0][1] - (a - a * decay) / s).abs() <= 1e-13);
    assert!((e[1][0] - (b - b * decay) / s).abs() <= 1e-13);
}

#[test]
fn first_passage_estimate_agrees_with_exact_value() {
    let model = bundled("golden.json");
    let f = DetPolicy(vec![0, 0]);
    let g = 0.8;
    // The estimator's variance is finite when the doubled-λ value is.
    assert!(
        first_passage_value(&model.with_lambda(2.0), &f, g, 0)
            .unwrap()
            .finite
    );
    let exact = first_passage_value(&model, &f, g, 0).unwrap();
    for (i0, seed) in [(0, 11), (1, 12)] {
        let est = estimate_first_passage(&model, &f, g, 0, i0, 200_000, seed, None).unwrap();
        assert_eq!(est.censored, 0);
        assert!(
            within(est.point, exact.h[i0], est.std_error, 4.0),
            "i0 = {i0}: {} vs {} (se {})",
            est.point,
            exact.h[i0],
            est.std_error
        );
    }
}

#[test]
fn first_passage_estimate_on_three_states() {
    let model = bundled("machine.json");
    let f = DetPolicy(vec![0, 1, 0]);
    let g = 1.2;
    assert!(
        first_passage_value(&model.with_lambda(2.0), &f, g, 1)
            .unwrap()
            .finite
    );
    let exact = first_passage_value(&model, &f, g, 1).unwrap();
    for i0 in 0..3 {
        let est =
            estimate_first_passage(&model, &f, g, 1, i0, 100_000, 30 + i0 as u64, None).unwrap();
        assert!(
            within(est.point, exact.h[i0], est.std_error, 4.0),
            "i0 = {i0}: {} vs {} (se {})",
            est.point,
            exact.h[i0],
            est.std_error
        );
    }
}

#[test]
fn finite_horizon_estimate_agrees_with_matrix_exponential() {
    for (name, f) in [
        ("golden.json", DetPolicy(vec![0, 0])),
        ("machine.json", DetPolicy(vec![0, 1, 0])),
    ] {
        let model = bundled(name);
        let horizon = 5.0;
        let exact = finite_horizon_value(&model, &f, 0, horizon);
        let est = estimate_average_cost(
            &model,
            &Policy::Deterministic(f.clone()),
            0,
            horizon,
            100_000,
            5,
        )
        .unwrap();
        assert!(
            within(est.point, exact, est.std_error, 4.0),
            "{name}: {} vs {} (se {})",
            est.point,
            exact,
            est.std_error
        );
    }
}

#[test]
fn small_lambda_estimate_matches_risk_neutral_average() {
    let model = bundled("machine.json").with_lambda(1e-3);
    let f = DetPolicy(vec![0, 1, 0]);
    let neutral = policy_value_risk_neutral(&model, &f).unwrap();
    let est = estimate_average_cost(&model, &Policy::Deterministic(f), 0, 200.0, 2_000, 9).unwrap();
    assert!(
        (est.point - neutral).abs() <= 0.02,
        "{} vs {}",
        est.point,
        neutral
    );
}

#[test]
fn constant_cost_estimate_is_exact() {
    let model = bundled("constant_cost.json");
    let f = DetPolicy(vec![0; model.n_states()]);
    let est = estimate_average_cost(&model, &Policy::Deterministic(f), 1, 50.0, 100, 3).unwrap();
    assert_eq!(est.point, 0.7);
    assert_eq!(est.std_error, 0.0);
}

#[test]
fn symmetric_chain_holding_times_have_unit_mean() {
    let model: CtmdpModel = chain(vec![vec![-1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0], 1.0);
    let traj = simulate_trajectory(
        &model,
        &Policy::Deterministic(DetPolicy(vec![0, 0])),
        0,
        40_000.0,
        17,
    )
    .unwrap();
    // Only completed sojourns are reported.
    let holds: Vec<f64> = traj.sojourns().map(|(_, d)| d).collect();
    let n = holds.len() as f64;
    let mean = holds.iter().sum::<f64>() / n;
    let var = holds.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(n > 30_000.0);
    assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean}, se {se}");
    // Exponential law: variance equals the squared mean.
    assert!((var - 1.0).abs() <= 0.05, "var {var}");
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let model = bundled("machine.json");
    let policy = Policy::Deterministic(DetPolicy(vec![0, 1, 0]));
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            (
                estimate_average_cost(&model, &policy, 0, 20.0, 5_000, 99).unwrap(),
                estimate_first_passage(
                    &model,
                    &DetPolicy(vec![0, 1, 0]),
                    1.2,
                    1,
                    0,
                    5_000,
                    99,
                    None,
                )
                .unwrap(),
            )
        })
    };
    let one = run(1);
    let many = run(4);
    assert_eq!(one.0.point.to_bits(), many.0.point.to_bits());
    assert_eq!(one.0.std_error.to_bits(), many.0.std_error.to_bits());
    assert_eq!(one.1.point.to_bits(), many.1.point.to_bits());
}
