mod common;

use seqnpa::moment::{build_guessing_program, build_moment_problem, compile_to_sdp, set_objective, RelaxationFlags};
use seqnpa::ncalg::LevelSpec;
use seqnpa::qsim::{weak_measurement_strategy, sequential_behavior};
use seqnpa::scenario::{NamedFunctional, ScenarioSpec};
use seqnpa::solver::{
    export_sdpa, import_sdpa, read_sdpa, solve, write_sdpa, Sense, Side, SdpStandardForm, SolveStatus, SolverConfig,
    SparseSym,
};
use seqnpa::tasks::DEFAULT_EPSILON;

/// maximize `x` subject to `x = 0.5`, `x ≥ 0`
fn toy() -> SdpStandardForm {
    let mut p = SdpStandardForm::new(vec![1]);
    let mut c = SparseSym::new();
    c.push(0, 0, 0, 1.0);
    p.objective = c.clone();
    p.add_constraint(c, 0.5);
    p.side = Side::Primal;
    p.sense = Sense::Maximize;
    p
}

fn sdpa_text(p: &SdpStandardForm) -> String {
    let mut out = Vec::new();
    write_sdpa(p, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn toy_problem_export_is_frozen() {
    let text = sdpa_text(&toy());
    assert_eq!(text, include_str!("golden/toy.dat-s"));
    assert_eq!(text.lines().count(), 7);
    let sol = solve(&toy(), &SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.primal_objective - 0.5).abs() < 1e-8);
}

#[test]
fn moment_problems_survive_a_round_trip() {
    let chsh = ScenarioSpec::chsh();
    let gallego = ScenarioSpec::gallego();
    let problems = [
        set_objective(
            build_moment_problem(&chsh, &LevelSpec::Degree(1), RelaxationFlags::plain()).unwrap(),
            &NamedFunctional::Chsh.build(&chsh).unwrap(),
        )
        .unwrap(),
        set_objective(
            build_moment_problem(&gallego, &LevelSpec::OnePlusAb, RelaxationFlags::sequential()).unwrap(),
            &NamedFunctional::GallegoI.build(&gallego).unwrap(),
        )
        .unwrap(),
    ];
    let dir = tempfile::tempdir().unwrap();
    for (i, p) in problems.iter().enumerate() {
        let sdp = compile_to_sdp(p).unwrap().sdp;
        let path = dir.path().join(format!("p{i}.dat-s"));
        export_sdpa(&sdp, &path).unwrap();
        let back = import_sdpa(&path).unwrap();
        assert_eq!(back.canonical(), sdp.canonical());
        // the re-import writes the same bytes
        assert_eq!(sdpa_text(&back), sdpa_text(&sdp));
    }
}

#[test]
fn malformed_block_sizes_name_line_three() {
    let err = read_sdpa("1\n1\nx\n0.5\n0 1 1 1 1\n1 1 1 1 1\n").unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn objective_only_file_is_a_feasibility_problem() {
    let p = read_sdpa("0\n1\n2\n\n0 1 1 1 1\n").unwrap();
    assert_eq!(p.num_constraints(), 0);
    assert_eq!(p.block_sizes, vec![2]);
}

#[test]
fn chsh_level_one_counts_are_frozen() {
    let s = ScenarioSpec::chsh();
    let p = build_moment_problem(&s, &LevelSpec::Degree(1), RelaxationFlags::plain()).unwrap();
    assert_eq!(p.blocks.len(), 1);
    assert_eq!(p.blocks[0].size(), 9);
    let p = set_objective(p, &NamedFunctional::Chsh.build(&s).unwrap()).unwrap();
    let c = compile_to_sdp(&p).unwrap();
    assert_eq!(p.blocks[0].num_keys(), CHSH1_KEYS);
    assert_eq!(c.sdp.num_constraints(), CHSH1_CONSTRAINTS);
}

#[test]
fn gallego_almost_quantum_counts_are_frozen() {
    let s = ScenarioSpec::gallego();
    let p = build_moment_problem(&s, &LevelSpec::OnePlusAb, RelaxationFlags::sequential()).unwrap();
    let p = set_objective(p, &NamedFunctional::GallegoI.build(&s).unwrap()).unwrap();
    let c = compile_to_sdp(&p).unwrap();
    assert_eq!(p.blocks[0].num_keys(), GALLEGO_KEYS);
    assert_eq!(p.blocks[0].size(), GALLEGO_SIZE);
    assert_eq!(c.sdp.num_constraints(), GALLEGO_CONSTRAINTS);
}

#[test]
fn guessing_program_counts_are_frozen() {
    let s = ScenarioSpec::randomness();
    let b = sequential_behavior(&weak_measurement_strategy(0.0, DEFAULT_EPSILON).unwrap()).unwrap();
    let p = build_guessing_program(&s, &LevelSpec::OnePlusAb, &b, &[1, 2]).unwrap();
    assert_eq!(p.blocks.len(), 6);
    assert!(p.blocks.iter().all(|m| m.size() == p.blocks[0].size()));
    let c = compile_to_sdp(&p).unwrap();
    assert_eq!(p.blocks[0].size(), GUESS_SIZE);
    assert_eq!(c.sdp.num_constraints(), GUESS_CONSTRAINTS);
}

#[test]
fn sequential_flags_change_nothing_for_single_steps() {
    let s = ScenarioSpec::chsh();
    for level in [LevelSpec::Degree(1), LevelSpec::OnePlusAb, LevelSpec::Degree(2)] {
        let plain = build_moment_problem(&s, &level, RelaxationFlags::plain()).unwrap();
        let seq = build_moment_problem(&s, &level, RelaxationFlags::sequential()).unwrap();
        assert_eq!(plain.equalities, seq.equalities);
    }
}

#[test]
fn solves_are_deterministic() {
    let s = ScenarioSpec::gallego();
    let p = set_objective(
        build_moment_problem(&s, &LevelSpec::Degree(1), RelaxationFlags::sequential()).unwrap(),
        &NamedFunctional::GallegoI.build(&s).unwrap(),
    )
    .unwrap();
    let (a, ba) = common::solve_checked(&p);
    let (b, bb) = common::solve_checked(&p);
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.primal_objective.to_bits(), b.primal_objective.to_bits());
    assert_eq!(ba.to_bits(), bb.to_bits());
}

const CHSH1_KEYS: usize = 33;
const CHSH1_CONSTRAINTS: usize = 10;
const GALLEGO_KEYS: usize = 1193;
const GALLEGO_SIZE: usize = 85;
const GALLEGO_CONSTRAINTS: usize = 188;
const GUESS_SIZE: usize = 145;
const GUESS_CONSTRAINTS: usize = 2346;
