//! Experiment drivers: functional maximization, the CHSH trade-off scan,
//! certified randomness curves and exhaustive time-ordered-local bounds.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moment::{
    build_guessing_program, build_moment_problem, compile_to_sdp, set_objective, MomentProblem, RelaxationFlags,
};
use crate::ncalg::{BasisMode, LevelSpec};
use crate::qsim::{chsh_strategy, gallego_strategy, weak_measurement_strategy, sequential_behavior};
use crate::scenario::{
    evaluate_functional, BellFunctional, Event, NamedFunctional, Party, PartySpec, ScenarioSpec, StepSpec,
};
use crate::solver::{solve, verified_dual_bound, SolveStatus, SolverConfig};

/// Default cap on the number of strategy pairs enumerated.
pub const DEFAULT_VERTEX_CAP: u128 = 10_000_000;

/// `√2 (1 + √(1 − s²/8))`, the optimal CHSH_AB2 value given CHSH_AB1 = `s`.
pub fn tradeoff_target(s: f64) -> f64 {
    SQRT_2 * (1.0 + (1.0 - s * s / 8.0).max(0.0).sqrt())
}

/// Measurement strength of the randomness strategy.
pub const DEFAULT_EPSILON: f64 = 7.0 * PI / 32.0;

/// `0, 0.01, …, 0.14`.
pub fn default_noise_grid() -> Vec<f64> {
    (0..15).map(|i| i as f64 / 100.0).collect()
}

/// `0, 0.1, …, 2.8` followed by `2√2`.
pub fn default_tradeoff_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (0..29).map(|i| i as f64 / 10.0).collect();
    g.push(2.0 * SQRT_2);
    g
}

/// `0, 2, 2.4, 2.7, 2√2`: the checkpoints of the trade-off curve.
pub fn checkpoint_tradeoff_grid() -> Vec<f64> {
    vec![0.0, 2.0, 2.4, 2.7, 2.0 * SQRT_2]
}

/// Solver settings for the flattened comparison scan.
pub fn comparison_solver() -> SolverConfig {
    SolverConfig { gap_tol: 1e-6, ..SolverConfig::default() }
}

/// Response functions: `tables[k][i]` is the output at step `k` for the
/// `i`-th input prefix `(x₁, …, x_{k+1})` in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicStrategy {
    pub tables: Vec<Vec<usize>>,
}

/// Mixed-radix enumeration of one party's deterministic strategies.
#[derive(Clone, Debug)]
pub struct StrategySpace {
    party: PartySpec,
    /// per step: number of input prefixes and, per prefix, the output count
    radices: Vec<Vec<usize>>,
}

fn prefix_index(party: &PartySpec, x: &[usize]) -> usize {
    x.iter().zip(&party.steps).fold(0, |i, (&xi, st)| i * st.inputs() + xi)
}

impl StrategySpace {
    pub fn new(party: &PartySpec) -> Self {
        let mut radices = Vec::new();
        let mut prefixes: Vec<Vec<usize>> = vec![Vec::new()];
        for st in &party.steps {
            prefixes = prefixes
                .iter()
                .flat_map(|p| (0..st.inputs()).map(move |x| [p.as_slice(), &[x]].concat()))
                .collect();
            radices.push(prefixes.iter().map(|p| st.outputs_per_input[*p.last().expect("non-empty")]).collect());
        }
        Self { party: party.clone(), radices }
    }

    pub fn count(&self) -> u128 {
        self.radices.iter().flatten().map(|&r| r as u128).product()
    }

    /// Strategy number `index`; the last table entry varies fastest.
    pub fn decode(&self, mut index: u128) -> DeterministicStrategy {
        let mut tables: Vec<Vec<usize>> = self.radices.iter().map(|r| vec![0; r.len()]).collect();
        for (k, r) in self.radices.iter().enumerate().rev() {
            for (i, &base) in r.iter().enumerate().rev() {
                tables[k][i] = (index % base as u128) as usize;
                index /= base as u128;
            }
        }
        DeterministicStrategy { tables }
    }

    /// Outputs for a full input sequence.
    pub fn respond(&self, s: &DeterministicStrategy, x: &[usize]) -> Vec<usize> {
        (0..x.len()).map(|k| s.tables[k][prefix_index(&self.party, &x[..=k])]).collect()
    }

    pub fn validate(&self, s: &DeterministicStrategy) -> Result<()> {
        if s.tables.len() != self.radices.len()
            || s.tables.iter().zip(&self.radices).any(|(t, r)| t.len() != r.len() || t.iter().zip(r).any(|(a, b)| a >= b))
        {
            return Err(Error::Shape("response table does not fit the party".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VertexResult {
    pub value: f64,
    pub strategies: [DeterministicStrategy; 2],
    pub pairs: u128,
}

/// Maximum of `f` over products of deterministic sequential strategies,
/// by exhaustive enumeration. Ties go to the first pair in enumeration
/// order (Alice's index major).
pub fn tol_vertex_max(s: &ScenarioSpec, f: &BellFunctional) -> Result<VertexResult> {
    tol_vertex_max_capped(s, f, DEFAULT_VERTEX_CAP)
}

pub fn tol_vertex_max_capped(s: &ScenarioSpec, f: &BellFunctional, cap: u128) -> Result<VertexResult> {
    if f.scenario != *s {
        return Err(Error::ScenarioMismatch(format!("functional is for {}, problem for {}", f.scenario, s)));
    }
    let spaces = [StrategySpace::new(s.party(Party::A)), StrategySpace::new(s.party(Party::B))];
    let (na, nb) = (spaces[0].count(), spaces[1].count());
    let count = na.saturating_mul(nb);
    if count > cap {
        return Err(Error::CapExceeded { count, cap });
    }
    let layout = s.layout();
    // dense coefficients over the behavior table
    let mut coef = vec![0.0; layout.len()];
    for (e, &v) in &f.coefficients {
        let i = layout.locate(e).ok_or_else(|| Error::InvalidIndex(format!("event {e} is outside the scenario")))?;
        coef[i] += v;
    }
    // per strategy: output index for every input index
    let responses = |p: Party, sp: &StrategySpace, i: u128| -> Vec<usize> {
        let st = sp.decode(i);
        layout.inputs[p.index()]
            .iter()
            .enumerate()
            .map(|(ix, x)| layout.output_index(p, ix, &sp.respond(&st, x)).expect("valid outputs"))
            .collect()
    };
    let bob: Vec<Vec<usize>> = (0..nb).map(|j| responses(Party::B, &spaces[1], j)).collect();
    let best_per_a = crate::par::map_range(na as usize, |i| {
        let ra = responses(Party::A, &spaces[0], i as u128);
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (j, rb) in bob.iter().enumerate() {
            let mut v = f.offset;
            for (ix, &ia) in ra.iter().enumerate() {
                for (iy, &ib) in rb.iter().enumerate() {
                    v += coef[layout.flat(ix, iy, ia, ib)];
                }
            }
            if v > best.0 {
                best = (v, j);
            }
        }
        best
    });
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for (i, &(v, j)) in best_per_a.iter().enumerate() {
        if v > best.0 {
            best = (v, i, j);
        }
    }
    Ok(VertexResult {
        value: best.0,
        strategies: [spaces[0].decode(best.1 as u128), spaces[1].decode(best.2 as u128)],
        pairs: count,
    })
}

/// Outcome of one relaxation solve, in the model's own units.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundResult {
    /// objective at the returned iterate
    pub value: f64,
    pub verified_bound: f64,
    pub status: SolveStatus,
    pub gap: f64,
    pub level: String,
    pub flags: RelaxationFlags,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub fingerprint: String,
}

impl BoundResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// Compile, solve and certify an assembled moment problem.
pub fn solve_moment_problem(p: &MomentProblem, cfg: &SolverConfig) -> Result<BoundResult> {
    let t = Instant::now();
    let compiled = compile_to_sdp(p)?;
    let sol = solve(&compiled.sdp, cfg)?;
    let (value, bound) = match sol.status {
        SolveStatus::Infeasible => (f64::NAN, f64::NAN),
        _ => (compiled.sdp.model_value(sol.primal_objective), verified_dual_bound(&compiled.sdp, &sol)?),
    };
    Ok(BoundResult {
        value,
        verified_bound: bound,
        status: sol.status,
        gap: sol.gap,
        level: p.level.to_string(),
        flags: p.flags,
        iterations: sol.iterations,
        wall_time_s: t.elapsed().as_secs_f64(),
        fingerprint: p.fingerprint_hash(),
    })
}

pub fn max_functional(s: &ScenarioSpec, f: &BellFunctional, level: &LevelSpec, flags: RelaxationFlags) -> Result<BoundResult> {
    max_functional_with(s, f, level, flags, &SolverConfig::default())
}

pub fn max_functional_with(
    s: &ScenarioSpec,
    f: &BellFunctional,
    level: &LevelSpec,
    flags: RelaxationFlags,
    cfg: &SolverConfig,
) -> Result<BoundResult> {
    let p = set_objective(build_moment_problem(s, level, flags)?, f)?;
    solve_moment_problem(&p, cfg)
}

/// A finite verified bound is valid whatever the final status; only
/// infeasibility or a non-finite bound is an error.
fn ok_or_solver(r: &BoundResult, what: &str) -> Result<()> {
    if r.status == SolveStatus::Infeasible || !r.verified_bound.is_finite() {
        return Err(Error::Solver(format!("{what}: solver finished with status {}", r.status)));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub s: f64,
    pub bound: f64,
    pub result: BoundResult,
}

/// Upper bound on CHSH_AB2 at each pinned value of CHSH_AB1.
pub fn chsh_tradeoff_scan(grid: &[f64], level: &LevelSpec, flags: RelaxationFlags) -> Result<Vec<TradeoffPoint>> {
    chsh_tradeoff_scan_with(grid, level, flags, &SolverConfig::default())
}

pub fn chsh_tradeoff_scan_with(
    grid: &[f64],
    level: &LevelSpec,
    flags: RelaxationFlags,
    cfg: &SolverConfig,
) -> Result<Vec<TradeoffPoint>> {
    let s = ScenarioSpec::gallego();
    let ab1 = NamedFunctional::ChshAb1.build(&s)?;
    let ab2 = NamedFunctional::ChshAb2.build(&s)?;
    pinned_scan(&s, &ab1, &ab2, grid, level, flags, cfg)
}

/// Trade-off bounds from the standard hierarchy with both of Bob's
/// measurements treated as one party.
pub fn flattened_tradeoff_scan(grid: &[f64], level: &LevelSpec, cfg: &SolverConfig) -> Result<Vec<TradeoffPoint>> {
    let s = ScenarioSpec::gallego();
    let ab1 = flatten_functional(&NamedFunctional::ChshAb1.build(&s)?)?;
    let ab2 = flatten_functional(&NamedFunctional::ChshAb2.build(&s)?)?;
    let flags = RelaxationFlags { basis: BasisMode::CollinsGisin, ..RelaxationFlags::plain() };
    pinned_scan(&flatten_scenario(&s)?, &ab1, &ab2, grid, level, flags, cfg)
}

fn pinned_scan(
    s: &ScenarioSpec,
    pinned: &BellFunctional,
    objective: &BellFunctional,
    grid: &[f64],
    level: &LevelSpec,
    flags: RelaxationFlags,
    cfg: &SolverConfig,
) -> Result<Vec<TradeoffPoint>> {
    if let Some(v) = grid.iter().find(|v| !(0.0..=2.0 * SQRT_2 + 1e-9).contains(*v)) {
        return Err(Error::InvalidParameter(format!("CHSH value {v} outside [0, 2√2]")));
    }
    let base = set_objective(build_moment_problem(s, level, flags)?, objective)?;
    crate::par::map_slice(grid, |&v| {
        let mut p = base.clone();
        p.add_functional_equality(pinned, v)?;
        let result = solve_moment_problem(&p, cfg)?;
        ok_or_solver(&result, &format!("trade-off at {v}"))?;
        Ok(TradeoffPoint { s: v, bound: result.verified_bound, result })
    })
    .into_iter()
    .collect()
}

/// Merge each party's steps into one step whose inputs and outputs are the
/// sequences, in lexicographic order. Sequential structure is forgotten.
pub fn flatten_scenario(s: &ScenarioSpec) -> Result<ScenarioSpec> {
    let flat = |p: &PartySpec| -> Result<PartySpec> {
        let outs = p.input_tuples().iter().map(|x| p.output_tuples(x).len()).collect();
        PartySpec::new(vec![StepSpec::new(outs)?])
    };
    Ok(ScenarioSpec::new(flat(s.party(Party::A))?, flat(s.party(Party::B))?))
}

/// The same functional on [`flatten_scenario`]'s scenario.
pub fn flatten_functional(f: &BellFunctional) -> Result<BellFunctional> {
    let s = &f.scenario;
    let flat = flatten_scenario(s)?;
    let layout = s.layout();
    let mut coefficients = std::collections::BTreeMap::new();
    for (e, &v) in &f.coefficients {
        let bad = || Error::InvalidIndex(format!("event {e} is outside the scenario"));
        let ix = layout.input_index(Party::A, &e.x).ok_or_else(bad)?;
        let iy = layout.input_index(Party::B, &e.y).ok_or_else(bad)?;
        let ia = layout.output_index(Party::A, ix, &e.a).ok_or_else(bad)?;
        let ib = layout.output_index(Party::B, iy, &e.b).ok_or_else(bad)?;
        *coefficients.entry(Event::new(&[ix], &[iy], &[ia], &[ib])).or_insert(0.0) += v;
    }
    BellFunctional::new(flat, coefficients, f.offset)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RandomnessPoint {
    pub eta: f64,
    /// `−log₂` of the certified guessing probability
    pub min_entropy: f64,
    pub guessing_probability: f64,
    pub result: BoundResult,
}

fn randomness_point(eta: f64, p: &MomentProblem, cfg: &SolverConfig) -> Result<RandomnessPoint> {
    let result = solve_moment_problem(p, cfg)?;
    ok_or_solver(&result, &format!("guessing program at η = {eta}"))?;
    let g = result.verified_bound.min(1.0);
    Ok(RandomnessPoint { eta, min_entropy: -g.log2(), guessing_probability: g, result })
}

/// Certified min-entropy of Bob's outputs at `y = (1, 2)` for the
/// sequential strategy on the isotropic state.
pub fn randomness_curve(grid: &[f64], epsilon: f64, level: &LevelSpec) -> Result<Vec<RandomnessPoint>> {
    randomness_curve_with(grid, epsilon, level, &SolverConfig::default())
}

pub fn randomness_curve_with(grid: &[f64], epsilon: f64, level: &LevelSpec, cfg: &SolverConfig) -> Result<Vec<RandomnessPoint>> {
    check_grid(grid)?;
    let s = ScenarioSpec::randomness();
    crate::par::map_slice(grid, |&eta| {
        let b = sequential_behavior(&weak_measurement_strategy(eta, epsilon)?)?;
        randomness_point(eta, &build_guessing_program(&s, level, &b, &[1, 2])?, cfg)
    })
    .into_iter()
    .collect()
}

/// Same quantity for the single-step CHSH strategy, guessing Bob's output
/// at input 0.
pub fn chsh_randomness_curve(grid: &[f64], level: &LevelSpec, cfg: &SolverConfig) -> Result<Vec<RandomnessPoint>> {
    check_grid(grid)?;
    let s = ScenarioSpec::chsh();
    crate::par::map_slice(grid, |&eta| {
        let b = sequential_behavior(&chsh_strategy(eta)?)?;
        randomness_point(eta, &build_guessing_program(&s, level, &b, &[0])?, cfg)
    })
    .into_iter()
    .collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    match grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::InvalidParameter(format!("noise parameter {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GallegoReport {
    pub upper: BoundResult,
    /// value of the explicit sequential strategy
    pub witness: f64,
    /// time-ordered-local maximum
    pub local: f64,
}

pub fn gallego_bound() -> Result<GallegoReport> {
    gallego_bound_with(&SolverConfig::default())
}

pub fn gallego_bound_with(cfg: &SolverConfig) -> Result<GallegoReport> {
    let s = ScenarioSpec::gallego();
    let f = NamedFunctional::GallegoI.build(&s)?;
    let upper = max_functional_with(&s, &f, &LevelSpec::OnePlusAb, RelaxationFlags::sequential(), cfg)?;
    let witness = evaluate_functional(&f, &sequential_behavior(&gallego_strategy())?)?;
    let local = tol_vertex_max(&s, &f)?.value;
    Ok(GallegoReport { upper, witness, local })
}

/// Writes `x y` per line with 12 significant digits.
pub fn write_plot_data(points: &[(f64, f64)], mut w: impl Write) -> Result<()> {
    for (x, y) in points {
        writeln!(w, "{} {}", sig12(*x), sig12(*y))?;
    }
    Ok(())
}

pub fn sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.11e}");
    let parsed: f64 = s.parse().expect("formatted float");
    // shortest decimal that round-trips the 12-digit value
    format!("{parsed}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_space_counts() {
        let s = ScenarioSpec::gallego();
        assert_eq!(StrategySpace::new(s.party(Party::A)).count(), 4);
        assert_eq!(StrategySpace::new(s.party(Party::B)).count(), 64);
        let r = ScenarioSpec::randomness();
        assert_eq!(StrategySpace::new(r.party(Party::B)).count(), 4 * 12 * 12);
    }

    #[test]
    fn decode_is_in_range_and_injective() {
        let sp = StrategySpace::new(ScenarioSpec::gallego().party(Party::B));
        let all: Vec<_> = (0..sp.count()).map(|i| sp.decode(i)).collect();
        for st in &all {
            sp.validate(st).unwrap();
        }
        let set: std::collections::BTreeSet<_> = all.iter().map(|s| s.tables.clone()).collect();
        assert_eq!(set.len(), 64);
    }

    #[test]
    fn cap_is_enforced() {
        let s = ScenarioSpec::gallego();
        let f = NamedFunctional::GallegoI.build(&s).unwrap();
        match tol_vertex_max_capped(&s, &f, 100) {
            Err(Error::CapExceeded { count, cap }) => assert_eq!((count, cap), (256, 100)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sig12_rounds() {
        assert_eq!(sig12(2.0), "2");
        assert_eq!(sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(sig12(2.0 * SQRT_2), "2.82842712475");
    }

    #[test]
    fn tradeoff_target_endpoints() {
        assert!((tradeoff_target(0.0) - 2.0 * SQRT_2).abs() < 1e-15);
        assert!((tradeoff_target(2.0 * SQRT_2) - SQRT_2).abs() < 1e-12);
        assert!((tradeoff_target(2.0) - (1.0 + SQRT_2)).abs() < 1e-12);
    }

    #[test]
    fn flattening_preserves_values() {
        let s = ScenarioSpec::gallego();
        let f = NamedFunctional::GallegoI.build(&s).unwrap();
        let b = sequential_behavior(&gallego_strategy()).unwrap();
        let ff = flatten_functional(&f).unwrap();
        let flat = flatten_scenario(&s).unwrap();
        let bf = crate::scenario::Behavior::new(flat, b.table.clone()).unwrap();
        assert!((evaluate_functional(&ff, &bf).unwrap() - evaluate_functional(&f, &b).unwrap()).abs() < 1e-12);
    }
}
