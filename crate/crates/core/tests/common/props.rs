//! Property checks shared by the property suite and the acceptance run.

use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use super::{assert_solution_invariants, cycler, random_state, random_steps, solve_checked};
use seqnpa::moment::{build_moment_problem, pin_behavior, set_objective, RelaxationFlags};
use seqnpa::ncalg::{moment_key, reduce, CanonicalForm, LevelSpec, OpSymbol, OpWord};
use seqnpa::qsim::{
    build_dilation, chsh_strategy, dilated_behavior, fact1_residuals, gallego_strategy, kron, weak_measurement_strategy,
    sequential_behavior, sequential_behavior_scheduled, CMat, MaxAbs, Schedule, SequentialStrategy,
};
use seqnpa::scenario::{evaluate_functional, validate_behavior, BellFunctional, NamedFunctional, Party, ScenarioSpec};
use seqnpa::solver::{solve, verified_dual_bound, Sense, Side, SdpStandardForm, SolveStatus, SolverConfig, SparseSym};
use seqnpa::tasks::DEFAULT_EPSILON;

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Explicit operators for every symbol of a strategy's scenario, on the joint
/// space, and a random Hermitian matrix there.
pub fn explicit_model(s: &SequentialStrategy, rng: &mut impl FnMut() -> f64) -> (Vec<(OpSymbol, CMat)>, CMat) {
    let da = build_dilation(&s.parties[0]).unwrap();
    let db = build_dilation(&s.parties[1]).unwrap();
    let (ia, ib) = (CMat::identity(da.dim, da.dim), CMat::identity(db.dim, db.dim));
    let mut ops = Vec::new();
    for (x, a, m) in &da.operators {
        ops.push((OpSymbol::new(Party::A, x, a), kron(m, &ib)));
    }
    for (y, b, m) in &db.operators {
        ops.push((OpSymbol::new(Party::B, y, b), kron(&ia, m)));
    }
    let d = da.dim * db.dim;
    let g = CMat::from_fn(d, d, |_, _| Complex64::new(rng(), rng()));
    (ops, &g + g.adjoint())
}

pub fn product(ops: &[(OpSymbol, CMat)], w: &OpWord, dim: usize) -> CMat {
    let mut m = CMat::identity(dim, dim);
    for l in &w.letters {
        m *= &ops.iter().find(|(s, _)| s == l).expect("symbol of the model").1;
    }
    m
}

pub fn reduction_input() -> impl Strategy<Value = (Vec<f64>, usize, Vec<usize>)> {
    (prop::collection::vec(-1.0f64..1.0, 64), 1usize..=2, prop::collection::vec(0usize..64, 1..=6))
}

/// A random word multiplies out to the same operator as its canonical form.
pub fn reduction_case(entries: Vec<f64>, inputs: usize, picks: Vec<usize>) -> Result<(), TestCaseError> {
    let mut rng = cycler(entries);
    let state = random_state(&mut rng, (2, 2));
    let s = SequentialStrategy::new(state, random_steps(&mut rng, 1, 2, 1), random_steps(&mut rng, 2, inputs, 1))
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let (ops, rho) = explicit_model(&s, &mut rng);
    let dim = rho.nrows();
    let w = OpWord::new(picks.iter().map(|&i| ops[i % ops.len()].0.clone()).collect());
    let m = product(&ops, &w, dim);
    match reduce(&w) {
        CanonicalForm::Zero => prop_assert!(m.max_abs() <= 1e-10, "{w} is not zero"),
        CanonicalForm::Word(r) => {
            prop_assert!((&m - product(&ops, &r, dim)).max_abs() <= 1e-10, "{w} != {r}");
            // the key carries the real part of the moment
            let key = moment_key(&w).expect("nonzero word").0;
            let lhs = (&rho * &m).trace().re;
            let rhs = (&rho * product(&ops, &key, dim)).trace().re;
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }
    }
    Ok(())
}

pub fn dilation_input() -> impl Strategy<Value = (Vec<f64>, usize, usize, usize)> {
    (prop::collection::vec(-1.0f64..1.0, 97), 1usize..=2, 1usize..=2, 1usize..=2)
}

/// Dilated projective model, Kraus iteration in every schedule, and Fact 1.
pub fn dilation_case(entries: Vec<f64>, inputs_a: usize, inputs_b: usize, kraus: usize) -> Result<(), TestCaseError> {
    let mut rng = cycler(entries);
    let state = random_state(&mut rng, (2, 2));
    let s = SequentialStrategy::new(
        state,
        random_steps(&mut rng, 1, inputs_a, 1),
        random_steps(&mut rng, 2, inputs_b, kraus),
    )
    .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let direct = sequential_behavior(&s).unwrap();
    let dilated = dilated_behavior(&s).unwrap();
    prop_assert!(max_diff(&direct.table, &dilated.table) <= 1e-10);
    prop_assert!(validate_behavior(&direct).unwrap().is_empty());
    for schedule in [Schedule::BobFirst, Schedule::Alternating] {
        let other = sequential_behavior_scheduled(&s, schedule).unwrap();
        prop_assert!(max_diff(&direct.table, &other.table) <= 1e-10);
    }
    for steps in &s.parties {
        let r = fact1_residuals(&build_dilation(steps).unwrap());
        prop_assert!(r.max() <= 1e-10, "{r:?}");
    }
    Ok(())
}

pub fn library_strategies() -> Vec<SequentialStrategy> {
    vec![
        weak_measurement_strategy(0.0, DEFAULT_EPSILON).unwrap(),
        weak_measurement_strategy(0.1, 0.3).unwrap(),
        chsh_strategy(0.0).unwrap(),
        gallego_strategy(),
    ]
}

/// Largest Fact 1 residual and dilation mismatch over the library strategies.
pub fn library_residual() -> f64 {
    let mut worst: f64 = 0.0;
    for s in &library_strategies() {
        for steps in &s.parties {
            worst = worst.max(fact1_residuals(&build_dilation(steps).unwrap()).max());
        }
        let direct = sequential_behavior(s).unwrap();
        worst = worst.max(max_diff(&direct.table, &dilated_behavior(s).unwrap().table));
    }
    worst
}

/// `max tr(CX)` with strictly feasible primal and dual by construction.
pub fn random_sdp(rng: &mut impl FnMut() -> f64, n: usize, m: usize) -> SdpStandardForm {
    let sym = |rng: &mut dyn FnMut() -> f64| {
        let g = nalgebra::DMatrix::from_fn(n, n, |_, _| rng());
        &g + g.transpose()
    };
    let sparse = |a: &nalgebra::DMatrix<f64>| {
        let mut s = SparseSym::new();
        for j in 0..n {
            for i in 0..=j {
                s.push(0, i, j, a[(i, j)]);
            }
        }
        s
    };
    let psd = |rng: &mut dyn FnMut() -> f64| {
        let g = nalgebra::DMatrix::from_fn(n, n, |_, _| rng());
        &g * g.transpose() + nalgebra::DMatrix::identity(n, n)
    };
    let x0 = psd(rng);
    let z0 = psd(rng);
    let mut p = SdpStandardForm::new(vec![n]);
    let mut c = -z0;
    for _ in 0..m {
        let a = sym(rng);
        let y = rng();
        c += &a * y;
        p.add_constraint(sparse(&a), a.dot(&x0));
    }
    p.objective = sparse(&c);
    p.side = Side::Primal;
    p.sense = Sense::Maximize;
    p
}

pub fn duality_input() -> impl Strategy<Value = (Vec<f64>, usize, usize)> {
    (prop::collection::vec(-1.0f64..1.0, 53), 2usize..=4, 1usize..=3)
}

pub fn duality_case(entries: Vec<f64>, n: usize, m: usize) -> Result<(), TestCaseError> {
    let mut rng = cycler(entries);
    let p = random_sdp(&mut rng, n, m);
    let sol = solve(&p, &SolverConfig::default()).unwrap();
    prop_assert_eq!(sol.status, SolveStatus::Optimal);
    let bound = verified_dual_bound(&p, &sol).unwrap();
    assert_solution_invariants(&p, &sol, bound);
    // a certificate at the optimum is tight
    prop_assert!((bound - sol.primal_objective).abs() <= 1e-5 * (1.0 + bound.abs()));
    Ok(())
}

pub fn chsh_like(coeffs: &[f64]) -> BellFunctional {
    let s = ScenarioSpec::chsh();
    let terms = s
        .layout()
        .events()
        .into_iter()
        .zip(coeffs.iter().cycle())
        .map(|(e, &c)| (e, c))
        .collect();
    BellFunctional::new(s, terms, 0.0).unwrap()
}

pub fn bound(s: &ScenarioSpec, f: &BellFunctional, level: LevelSpec, flags: RelaxationFlags) -> f64 {
    let p = set_objective(build_moment_problem(s, &level, flags).unwrap(), f).unwrap();
    solve_checked(&p).1
}

pub fn monotone_input() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 16)
}

pub fn monotone_case(coeffs: Vec<f64>) -> Result<(), TestCaseError> {
    let s = ScenarioSpec::chsh();
    let f = chsh_like(&coeffs);
    let flags = RelaxationFlags::sequential();
    let b1 = bound(&s, &f, LevelSpec::Degree(1), flags);
    let bab = bound(&s, &f, LevelSpec::OnePlusAb, flags);
    let b2 = bound(&s, &f, LevelSpec::Degree(2), flags);
    prop_assert!(bab <= b1 + 1e-6, "{bab} > {b1}");
    prop_assert!(b2 <= bab + 1e-6, "{b2} > {bab}");
    Ok(())
}

/// Bounds of the named objectives at increasing levels, each list nonincreasing.
pub fn named_level_chains() -> Vec<(String, Vec<f64>)> {
    let chsh = ScenarioSpec::chsh();
    let f = NamedFunctional::Chsh.build(&chsh).unwrap();
    let seq = RelaxationFlags::sequential();
    let levels = [LevelSpec::Degree(1), LevelSpec::OnePlusAb, LevelSpec::Degree(2), LevelSpec::Degree(3)];
    let mut out = vec![("chsh".to_string(), levels.iter().map(|l| bound(&chsh, &f, l.clone(), seq)).collect())];
    let g = ScenarioSpec::gallego();
    for name in [NamedFunctional::GallegoI, NamedFunctional::ChshAb2] {
        let f = name.build(&g).unwrap();
        let chain = [LevelSpec::Degree(1), LevelSpec::OnePlusAb].iter().map(|l| bound(&g, &f, l.clone(), seq)).collect();
        out.push((name.to_string(), chain));
    }
    out
}

pub fn is_nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] + 1e-6)
}

/// Pinning a simulated behavior leaves a feasible relaxation.
pub fn pinned_behaviors_feasible() -> bool {
    let cases = [
        (chsh_strategy(0.3).unwrap(), LevelSpec::Degree(2)),
        (gallego_strategy(), LevelSpec::OnePlusAb),
        (weak_measurement_strategy(0.05, DEFAULT_EPSILON).unwrap(), LevelSpec::Degree(1)),
    ];
    cases.iter().all(|(s, level)| {
        let b = sequential_behavior(s).unwrap();
        let p = pin_behavior(build_moment_problem(&b.scenario, level, RelaxationFlags::sequential()).unwrap(), &b).unwrap();
        solve_checked(&p).0.status != SolveStatus::Infeasible
    })
}

/// Value of a quantum strategy never exceeds the certified bound.
pub fn witness_below_bound() -> bool {
    let g = ScenarioSpec::gallego();
    let f = NamedFunctional::GallegoI.build(&g).unwrap();
    let value = evaluate_functional(&f, &sequential_behavior(&gallego_strategy()).unwrap()).unwrap();
    let upper = bound(&g, &f, LevelSpec::OnePlusAb, RelaxationFlags::sequential());
    let s = ScenarioSpec::chsh();
    let f = NamedFunctional::Chsh.build(&s).unwrap();
    let chsh_ok = [0.0, 0.2, 0.5].iter().all(|&eta| {
        let b = sequential_behavior(&chsh_strategy(eta).unwrap()).unwrap();
        evaluate_functional(&f, &b).unwrap() <= bound(&s, &f, LevelSpec::Degree(1), RelaxationFlags::plain()) + 1e-9
    });
    value <= upper + 1e-9 && chsh_ok
}

pub fn sequential_flags_tighten() -> bool {
    let g = ScenarioSpec::gallego();
    let f = NamedFunctional::GallegoI.build(&g).unwrap();
    let plain = bound(&g, &f, LevelSpec::Degree(1), RelaxationFlags::plain());
    let seq = bound(&g, &f, LevelSpec::Degree(1), RelaxationFlags::sequential());
    seq <= plain + 1e-6
}
