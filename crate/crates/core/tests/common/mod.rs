//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod props;

use num_complex::Complex64;
use seqnpa::moment::{compile_to_sdp, MomentProblem};
use seqnpa::qsim::{random_instrument, CMat, DensityMatrix, KrausSet};
use seqnpa::solver::{solve, verified_dual_bound, Sense, SdpSolution, SdpStandardForm, SolveStatus, SolverConfig};

/// Endless source of numbers cycling through `v`.
pub fn cycler(v: Vec<f64>) -> impl FnMut() -> f64 {
    let mut i = 0;
    move || {
        let x = v[i % v.len()];
        i += 1;
        x
    }
}

pub fn random_state(rng: &mut impl FnMut() -> f64, dims: (usize, usize)) -> DensityMatrix {
    let d = dims.0 * dims.1;
    let g = CMat::from_fn(d, d, |_, _| Complex64::new(rng(), rng()));
    let mut m = &g * g.adjoint() + CMat::identity(d, d) * Complex64::new(0.05, 0.0);
    let tr = m.trace();
    m /= tr;
    m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    DensityMatrix::new(m, dims).expect("normalized state")
}

/// Instruments for `steps` steps on a qubit, each with `inputs` inputs and two outcomes.
pub fn random_steps(rng: &mut impl FnMut() -> f64, steps: usize, inputs: usize, kraus: usize) -> Vec<KrausSet> {
    (0..steps).map(|_| random_instrument(rng, 2, &vec![2; inputs], kraus)).collect()
}

/// Weak duality and verified-bound dominance for one solve.
pub fn assert_solution_invariants(p: &SdpStandardForm, sol: &SdpSolution, bound: f64) {
    if sol.status == SolveStatus::Infeasible {
        return;
    }
    let scale = 1.0 + sol.primal_objective.abs() + sol.dual_objective.abs();
    if sol.status == SolveStatus::Optimal {
        assert!(
            sol.primal_objective <= sol.dual_objective + 1e-6 * scale,
            "weak duality: primal {} dual {}",
            sol.primal_objective,
            sol.dual_objective
        );
    }
    let value = p.model_value(sol.primal_objective);
    let tol = 1e-6 * (1.0 + value.abs());
    match p.sense {
        Sense::Maximize => assert!(bound >= value - tol, "bound {bound} below value {value}"),
        Sense::Minimize => assert!(bound <= value + tol, "bound {bound} above value {value}"),
    }
}

/// Compile, solve and certify, checking the solver invariants on the way.
pub fn solve_checked(p: &MomentProblem) -> (SdpSolution, f64) {
    let compiled = compile_to_sdp(p).expect("compiles");
    let sol = solve(&compiled.sdp, &SolverConfig::default()).expect("solves");
    let bound = verified_dual_bound(&compiled.sdp, &sol).expect("certifies");
    assert_solution_invariants(&compiled.sdp, &sol, bound);
    (sol, bound)
}
