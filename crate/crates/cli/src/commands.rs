use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use seqnpa::moment::{build_guessing_program_with, build_moment_problem, compile_to_sdp, set_objective, MomentProblem};
use seqnpa::ncalg::LevelSpec;
use seqnpa::qsim::sequential_behavior;
use seqnpa::scenario::{validate_behavior, Behavior};
use seqnpa::solver::{write_sdpa, SolveStatus, SolverConfig};
use seqnpa::tasks::{self, sig12, tradeoff_target, write_plot_data};

use crate::config::RunConfig;
use crate::{CliError, Target};

enum Kind {
    Bell { functional: String },
    Guessing { guess: Vec<usize> },
}

struct Assembled {
    problem: MomentProblem,
    kind: Kind,
}

fn behavior_for(cfg: &RunConfig) -> Result<Behavior, CliError> {
    if let Some(path) = &cfg.relaxation.behavior {
        let f = File::open(path).map_err(|e| CliError::config(format!("relaxation.behavior: {}: {e}", path.display())))?;
        return Behavior::read_from(BufReader::new(f)).map_err(|e| CliError::config(format!("relaxation.behavior: {e}")));
    }
    match cfg.strategy()? {
        Some(s) => {
            let strat = s.build().map_err(|e| CliError::config(format!("strategy: {e}")))?;
            Ok(sequential_behavior(&strat)?)
        }
        None => Err(CliError::config("a guessing program needs relaxation.behavior or a strategy")),
    }
}

fn assemble(cfg: &RunConfig) -> Result<Assembled, CliError> {
    let level = cfg.level()?;
    let flags = cfg.flags()?;
    if let Some(guess) = &cfg.relaxation.guess {
        let b = behavior_for(cfg)?;
        if let Some(s) = cfg.scenario()? {
            if s != b.scenario {
                return Err(CliError::config(format!("scenario: behavior is for {}, config names {s}", b.scenario)));
            }
        }
        let s = b.scenario.clone();
        let problem = build_guessing_program_with(&s, &level, &b, guess, flags)
            .map_err(|e| CliError::config(format!("relaxation.guess: {e}")))?;
        return Ok(Assembled { problem, kind: Kind::Guessing { guess: guess.clone() } });
    }
    let scenario = cfg.scenario()?;
    let (s, f) = cfg.functional(scenario.as_ref())?;
    let name = cfg
        .functional
        .name
        .clone()
        .or_else(|| cfg.functional.file.as_ref().map(|p| p.display().to_string()))
        .unwrap_or_default();
    let problem = set_objective(build_moment_problem(&s, &level, flags)?, &f)?;
    Ok(Assembled { problem, kind: Kind::Bell { functional: name } })
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    if let Some(p) = path {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(p, text)?;
    }
    Ok(())
}

pub fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let a = assemble(cfg)?;
    let solver = cfg.solver()?;
    let r = tasks::solve_moment_problem(&a.problem, &solver)?;
    let mut record = serde_json::to_value(&r).expect("serializable");
    let obj = record.as_object_mut().expect("object");
    obj.insert("scenario".into(), json!(a.problem.scenario.to_string()));
    match &a.kind {
        Kind::Bell { functional } => {
            obj.insert("task".into(), json!("bell"));
            obj.insert("functional".into(), json!(functional));
        }
        Kind::Guessing { guess } => {
            let g = r.verified_bound.min(1.0);
            obj.insert("task".into(), json!("guessing"));
            obj.insert("guess".into(), json!(guess));
            obj.insert("guessing_probability".into(), json!(g));
            obj.insert("min_entropy".into(), json!(-g.log2()));
        }
    }
    let text = serde_json::to_string_pretty(&record).expect("serializable");
    println!("{text}");
    write_output(cfg.output.path.as_deref(), &format!("{text}\n"))?;
    status_result(r.status)
}

fn status_result(status: SolveStatus) -> Result<(), CliError> {
    match status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible => Err(CliError::Infeasible("the relaxation has no feasible point".into())),
        st => Err(CliError::Numerical(format!("solver finished with status {st}; the verified bound is still valid"))),
    }
}

pub fn export(cfg: &RunConfig, fingerprint: Option<&Path>, trace: Option<&Path>) -> Result<(), CliError> {
    let path = cfg.output.path.clone().ok_or_else(|| CliError::config("output.path: export needs an output file"))?;
    let a = assemble(cfg)?;
    let compiled = compile_to_sdp(&a.problem)?;
    let mut text = Vec::new();
    write_sdpa(&compiled.sdp, &mut text)?;
    write_output(Some(&path), std::str::from_utf8(&text).expect("ascii"))?;
    if let Some(p) = fingerprint {
        let mut w = BufWriter::new(File::create(p)?);
        a.problem.write_fingerprint(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = trace {
        let mut w = BufWriter::new(File::create(p)?);
        compiled.write_trace(&mut w)?;
        w.flush()?;
    }
    eprintln!(
        "wrote {} ({} constraints, blocks {:?}, offset {})",
        path.display(),
        compiled.sdp.num_constraints(),
        compiled.sdp.block_sizes,
        compiled.sdp.offset
    );
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let s = cfg.strategy()?.ok_or_else(|| CliError::config("strategy: missing (use --strategy or a [strategy] section)"))?;
    let strat = s.build().map_err(|e| CliError::config(format!("strategy: {e}")))?;
    let b = sequential_behavior(&strat)?;
    let text = b.to_text();
    match &cfg.output.path {
        Some(p) => write_output(Some(p), &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn check(path: &Path) -> Result<(), CliError> {
    let f = File::open(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let b = Behavior::read_from(BufReader::new(f))?;
    let report = validate_behavior(&b)?;
    if report.is_empty() {
        println!("ok: {} records, scenario {}", b.table.len(), b.scenario);
        return Ok(());
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    let worst = report.worst(|_| true).expect("non-empty");
    Err(CliError::Infeasible(format!("{} violation(s); worst: {worst}", report.violations.len())))
}

struct Summary {
    lines: Vec<String>,
    failed: usize,
}

impl Summary {
    fn new() -> Self {
        Self { lines: Vec::new(), failed: 0 }
    }

    fn check(&mut self, pass: bool, name: &str, detail: String) {
        if !pass {
            self.failed += 1;
        }
        self.lines.push(format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.lines.push(line);
    }

    fn finish(self, dir: &Path, target: &str) -> Result<(), CliError> {
        let text = self.lines.join("\n") + "\n";
        print!("{text}");
        fs::write(dir.join(format!("{target}_summary.txt")), &text)?;
        match self.failed {
            0 => Ok(()),
            n => Err(CliError::Numerical(format!("{n} checkpoint(s) failed"))),
        }
    }
}

fn write_curve(dir: &Path, name: &str, points: &[(f64, f64)]) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    write_plot_data(points, &mut w)?;
    w.flush()?;
    Ok(path)
}

fn parse_level(text: Option<&str>, default: LevelSpec, field: &str) -> Result<LevelSpec, CliError> {
    match text {
        None => Ok(default),
        Some(t) => t.parse().map_err(|e| CliError::config(format!("{field}: {e}"))),
    }
}

pub fn reproduce(cfg: &RunConfig, target: Target, level: Option<&str>, comparison: Option<&str>) -> Result<(), CliError> {
    let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    let solver = cfg.solver()?;
    let level = parse_level(level, LevelSpec::OnePlusAb, "level")?;
    let comparison = parse_level(comparison, LevelSpec::Degree(2), "comparison-level")?;
    match target {
        Target::FigRand => fig_rand(&dir, &level, &comparison, &solver),
        Target::Tradeoff => tradeoff(&dir, &level, &comparison, &solver),
        Target::Gallego => gallego(&dir, &solver),
    }
}

fn fig_rand(dir: &Path, level: &LevelSpec, comparison: &LevelSpec, solver: &SolverConfig) -> Result<(), CliError> {
    let grid = tasks::default_noise_grid();
    let seq = tasks::randomness_curve_with(&grid, tasks::DEFAULT_EPSILON, level, solver)?;
    let seq_pts: Vec<(f64, f64)> = seq.iter().map(|p| (p.eta, p.min_entropy)).collect();
    write_curve(dir, "fig_rand_sequential.dat", &seq_pts)?;
    let chsh = tasks::chsh_randomness_curve(&grid, comparison, solver)?;
    let chsh_pts: Vec<(f64, f64)> = chsh.iter().map(|p| (p.eta, p.min_entropy)).collect();
    write_curve(dir, "fig_rand_chsh.dat", &chsh_pts)?;

    let mut sum = Summary::new();
    sum.note(format!("sequential strategy, level {level}; CHSH strategy, level {comparison}"));
    for (p, q) in seq.iter().zip(&chsh) {
        sum.note(format!(
            "eta {} sequential {} ({}) chsh {} ({})",
            sig12(p.eta),
            sig12(p.min_entropy),
            p.result.status,
            sig12(q.min_entropy),
            q.result.status
        ));
    }
    let h0 = seq[0].min_entropy;
    sum.check(h0 >= 2.3, "min-entropy at eta = 0 >= 2.3 bits", sig12(h0));
    let low: Vec<_> = seq.iter().zip(&chsh).filter(|(p, _)| p.eta <= 0.03 + 1e-12).collect();
    let worst = low.iter().map(|(p, q)| p.min_entropy - q.min_entropy).fold(f64::INFINITY, f64::min);
    sum.check(worst > 0.0, "sequential above CHSH for eta <= 0.03", format!("smallest margin {}", sig12(worst)));
    let rises: Vec<f64> = seq.windows(2).filter(|w| w[1].min_entropy > w[0].min_entropy + 1e-9).map(|w| w[1].eta).collect();
    if rises.is_empty() {
        sum.note("monotone: sequential curve is nonincreasing in eta".into());
    } else {
        sum.note(format!("FLAG sequential curve rises at eta {rises:?}"));
    }
    sum.finish(dir, "fig-rand")
}

fn tradeoff(dir: &Path, level: &LevelSpec, comparison: &LevelSpec, solver: &SolverConfig) -> Result<(), CliError> {
    let grid = tasks::default_tradeoff_grid();
    let seq = tasks::chsh_tradeoff_scan_with(&grid, level, seqnpa::moment::RelaxationFlags::sequential(), solver)?;
    let seq_pts: Vec<(f64, f64)> = seq.iter().map(|p| (p.s, p.bound)).collect();
    write_curve(dir, "tradeoff_sequential.dat", &seq_pts)?;
    let target: Vec<(f64, f64)> = grid.iter().map(|&s| (s, tradeoff_target(s))).collect();
    write_curve(dir, "tradeoff_target.dat", &target)?;

    let mut sum = Summary::new();
    sum.note(format!("sequential relaxation level {level}; flattened comparison level {comparison}"));
    let mut dev: f64 = 0.0;
    for p in &seq {
        let d = (p.bound - tradeoff_target(p.s)).abs();
        dev = dev.max(d);
        sum.note(format!(
            "s {} bound {} target {} ({})",
            sig12(p.s),
            sig12(p.bound),
            sig12(tradeoff_target(p.s)),
            p.result.status
        ));
    }
    sum.check(dev <= 1e-3, "max deviation from the optimal trade-off <= 1e-3", sig12(dev));

    // the flattened relaxation is large; compare at the checkpoints only
    let checkpoints = tasks::checkpoint_tradeoff_grid();
    let cmp = SolverConfig { gap_tol: solver.gap_tol.min(tasks::comparison_solver().gap_tol), ..solver.clone() };
    let seq_cp = tasks::chsh_tradeoff_scan_with(&checkpoints, level, seqnpa::moment::RelaxationFlags::sequential(), solver)?;
    let flat = tasks::flattened_tradeoff_scan(&checkpoints, comparison, &cmp)?;
    let flat_pts: Vec<(f64, f64)> = flat.iter().map(|p| (p.s, p.bound)).collect();
    write_curve(dir, "tradeoff_flattened.dat", &flat_pts)?;
    let mut below = 0;
    for (p, q) in seq_cp.iter().zip(&flat) {
        if q.bound < p.bound - 1e-5 {
            below += 1;
        }
        sum.note(format!("s {} flattened {} ({}) sequential {}", sig12(q.s), sig12(q.bound), q.result.status, sig12(p.bound)));
    }
    sum.check(below == 0, "flattened curve above the sequential curve", format!("{below} point(s) below"));
    sum.finish(dir, "tradeoff")
}

fn gallego(dir: &Path, solver: &SolverConfig) -> Result<(), CliError> {
    let r = tasks::gallego_bound_with(solver)?;
    fs::write(dir.join("gallego.json"), serde_json::to_string_pretty(&r).expect("serializable") + "\n")?;
    let tsirelson = 2.0 * std::f64::consts::SQRT_2;
    let mut sum = Summary::new();
    sum.check(
        (r.upper.verified_bound - tsirelson).abs() <= 1e-3,
        "upper bound (level 1+AB, sequential) = 2.8284",
        format!("{} ({})", sig12(r.upper.verified_bound), r.upper.status),
    );
    sum.check(r.witness >= tsirelson - 1e-3, "explicit strategy >= 2.8284", sig12(r.witness));
    sum.check(r.local == 2.0, "time-ordered-local maximum = 2", sig12(r.local));
    sum.check(
        r.witness <= r.upper.verified_bound + 1e-6,
        "strategy value within the upper bound",
        format!("{} <= {}", sig12(r.witness), sig12(r.upper.verified_bound)),
    );
    sum.finish(dir, "gallego")
}
