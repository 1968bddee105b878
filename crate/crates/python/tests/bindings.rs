use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn data(name: &str) -> String {
    format!("{}/../core/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Runs a Python snippet with the module bound to `rc` and `data` mapping
/// bundled file names to paths.
fn run(code: &str) {
    Python::attach(|py| {
        let module = wrap_pymodule!(riskctmdp_py::riskctmdp_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("rc", module).unwrap();
        let files = PyDict::new(py);
        for name in [
            "golden.json",
            "machine.json",
            "constant_cost.json",
            "malformed/row_sum.json",
        ] {
            files.set_item(name, data(name)).unwrap();
        }
        globals.set_item("data", files).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed: {e}");
        }
    });
}

#[test]
fn golden_model_solves_to_closed_form() {
    run(r#"
m = rc.Model.load(data["golden.json"])
r = rc.solve(m, z="low")
assert abs(r.g_star - (5 ** 0.5 - 1) / 2) < 1e-9, r
assert r.policy == [0, 0]
assert r.residual_op < 1e-8
assert abs(rc.policy_value(m, [0, 0]) - r.g_star) < 1e-9
"#);
}

#[test]
fn policies_accept_indices_labels_and_weights() {
    run(r#"
m = rc.Model.load(data["machine.json"])
a = rc.policy_value(m, [0, 1, 1])
b = rc.policy_value(m, {"good": "run", "worn": "service", "broken": "replace"})
assert a == b
w = rc.policy_value(m, [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
assert abs(w - a) < 1e-12
assert rc.risk_neutral_value(m, [0, 1, 1]) <= a
policy, value, evaluated = rc.brute_force_optimal(m)
assert evaluated == 8
assert abs(rc.solve(m).g_star - value) < 1e-6
"#);
}

#[test]
fn first_passage_and_membership() {
    run(r#"
m = rc.Model.load(data["golden.json"])
fp = rc.first_passage_value(m, [0, 0], 0.8, z=0)
assert fp.status == "exact" and fp.finite
opt = rc.optimal_first_passage(m, 0.8, z=0)
assert opt.x == fp.x
assert rc.membership(m, 0.8) == "negative"
assert rc.membership(m, 0.3) == "positive"
"#);
}

#[test]
fn errors_map_to_python_exceptions() {
    run(r#"
try:
    rc.solve(rc.Model.load(data["malformed/row_sum.json"]))
    raise AssertionError("expected ValueError")
except ValueError:
    pass
m = rc.Model.load(data["golden.json"])
try:
    rc.solve(m, z="nowhere")
    raise AssertionError("expected ValueError")
except ValueError:
    pass
try:
    rc.Model.load("/nonexistent/model.json")
    raise AssertionError("expected OSError")
except OSError:
    pass
assert m.validate() == []
assert rc.Model.load(data["malformed/row_sum.json"]).validate()[0][0] == "row_sum"
"#);
}

#[test]
fn estimates_are_reproducible() {
    run(r#"
m = rc.Model.load(data["constant_cost.json"])
e = rc.estimate_average_cost(m, [0] * m.n_states, horizon=10.0, n=100, seed=3)
assert e.point == 0.7 and e.std_error == 0.0
g = rc.Model.load(data["golden.json"])
a = rc.estimate_first_passage(g, [0, 0], 0.8, z=0, i0=1, n=2000, seed=5)
b = rc.estimate_first_passage(g, [0, 0], 0.8, z=0, i0=1, n=2000, seed=5)
assert a.point == b.point and a.seed == 5
times, states = rc.simulate_trajectory(g, [0, 0], 10.0, seed=1)
assert len(states) == len(times) + 1
"#);
}

#[test]
fn model_round_trips_through_json() {
    run(r#"
m = rc.Model(["a", "b"], [["x"], ["x"]], [[[-1.0, 1.0]], [[2.0, -2.0]]], [[0.0], [1.0]], 0.5)
back = rc.Model.from_json(m.to_json())
assert back.rates == m.rates and back.lambda_ == 0.5
assert back.with_lambda(2.0).lambda_ == 2.0
"#);
}
