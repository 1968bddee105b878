//! Risk-sensitive average-cost optimization for finite continuous-time
//! Markov decision processes.
//!
//! The optimal rate `ḡ` is the infimum of the rates `g` whose optimal
//! first-passage value at a reference state is nonpositive. [`solve`] finds it
//! by bisection on that membership test, and recovers the relative values and
//! an optimal deterministic stationary policy. Spectral, enumerative,
//! risk-neutral and Monte Carlo evaluators are provided to cross-check the
//! result.

// Negated float comparisons deliberately send NaN down the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod average_solver;
pub mod cli;
pub mod error;
pub mod first_passage;
pub mod io;
pub mod linalg;
pub mod model;
pub mod simulator;

pub use average_solver::{
    brute_force_optimal, extract_policy, policy_value_risk_neutral, policy_value_spectral, solve,
    solve_with, stationary_distribution, BruteForceResult, EvalDetails, EvalMethod, EvalReport,
    SolveOptions, SolveReport, DEFAULT_TOL,
};
pub use error::{Error, Result};
pub use first_passage::{
    first_passage_value, membership_in_g, optimal_first_passage, optimal_first_passage_with,
    q_factor, FirstPassageOptions, FirstPassageSolution, Membership, QFactor, SolutionStatus,
};
pub use model::{
    induced_generator, irreducible_under, validate_model, CtmdpModel, DetPolicy, InducedChain,
    Policy, RandStationaryPolicy, ValidationReport, Violation,
};
pub use simulator::{
    estimate_average_cost, estimate_first_passage, policy_value_monte_carlo, simulate_trajectory,
    McEstimate, Trajectory,
};
