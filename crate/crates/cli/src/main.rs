//! `seqnpa` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration error, 2 infeasible (or an invalid
//! behavior for `check`), 3 numerical failure or a failed checkpoint.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Infeasible(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<seqnpa::Error> for CliError {
    fn from(e: seqnpa::Error) -> Self {
        use seqnpa::Error as E;
        match e {
            E::Io(err) => CliError::Io(err.to_string()),
            E::Solver(m) => CliError::Numerical(m),
            E::MissingDuals(m) => CliError::Numerical(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "seqnpa", version, about = "Semidefinite relaxations of sequential quantum correlations")]
struct Cli {
    /// TOML run configuration; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// worker threads (0 = one per core); also read from SEQNPA_WORKERS
    #[arg(long, global = true, env = "SEQNPA_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bound a Bell functional or a guessing probability
    Solve(ProblemArgs),
    /// Write the compiled SDP in SDPA sparse format
    Export(ExportArgs),
    /// Compute the behavior of a quantum strategy
    Simulate(SimulateArgs),
    /// Validate a behavior file
    Check { file: PathBuf },
    /// Regenerate a headline result with frozen defaults
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct ProblemArgs {
    /// named scenario: chsh, gallego, randomness
    #[arg(long)]
    scenario: Option<String>,
    /// named functional: chsh, chsh_ab1, chsh_ab2, gallego_I
    #[arg(long)]
    functional: Option<String>,
    /// functional file (TOML with `offset` and `terms`)
    #[arg(long)]
    functional_file: Option<PathBuf>,
    /// NPA level: a positive integer or 1+AB
    #[arg(long)]
    level: Option<String>,
    /// sequential constraints (the default)
    #[arg(long, group = "flagset")]
    sequential: bool,
    /// no sequential constraints
    #[arg(long, group = "flagset")]
    plain: bool,
    /// sequential plus commuting same-party operators (time-ordered local)
    #[arg(long, group = "flagset")]
    local: bool,
    /// full or collins-gisin
    #[arg(long)]
    basis: Option<String>,
    /// behavior file pinned in a guessing program
    #[arg(long)]
    behavior: Option<PathBuf>,
    /// Bob's guessed input sequence, e.g. `1,2`
    #[arg(long, value_delimiter = ',')]
    guess: Option<Vec<usize>>,
    #[command(flatten)]
    strategy: StrategyArgs,
    #[arg(long)]
    gap_tol: Option<f64>,
    #[arg(long)]
    feas_tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// print solver iterations
    #[arg(long)]
    verbose: bool,
    /// write the JSON record here as well as to stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct StrategyArgs {
    /// library strategy (weak, chsh, gallego) or a strategy file
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// problem fingerprint dump
    #[arg(long)]
    fingerprint: Option<PathBuf>,
    /// moment → variable table
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    strategy: StrategyArgs,
    /// behavior file; stdout when absent
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Target {
    FigRand,
    Tradeoff,
    Gallego,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    #[arg(value_enum)]
    target: Target,
    /// directory for data files and the summary
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// level of the main relaxation
    #[arg(long)]
    level: Option<String>,
    /// level of the comparison curve
    #[arg(long)]
    comparison_level: Option<String>,
    #[arg(long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seqnpa: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let workers = cli.workers.or(cfg.solver.workers).unwrap_or(0);
    cfg.solver.workers = Some(workers);
    seqnpa::par::with_workers(workers, move || match cli.command {
        Command::Solve(a) => {
            apply_problem(&mut cfg, &a);
            commands::solve(&cfg)
        }
        Command::Export(a) => {
            apply_problem(&mut cfg, &a.problem);
            commands::export(&cfg, a.fingerprint.as_deref(), a.trace.as_deref())
        }
        Command::Simulate(a) => {
            apply_strategy(&mut cfg, &a.strategy);
            if a.output.is_some() {
                cfg.output.path = a.output;
            }
            commands::simulate(&cfg)
        }
        Command::Check { file } => commands::check(&file),
        Command::Reproduce(a) => {
            if a.out_dir.is_some() {
                cfg.output.dir = a.out_dir;
            }
            if a.verbose {
                cfg.solver.verbose = Some(true);
            }
            commands::reproduce(&cfg, a.target, a.level.as_deref(), a.comparison_level.as_deref())
        }
    })
}

fn apply_problem(cfg: &mut RunConfig, a: &ProblemArgs) {
    if let Some(s) = &a.scenario {
        cfg.scenario = config::ScenarioSection { name: Some(s.clone()), ..Default::default() };
    }
    if let Some(f) = &a.functional {
        cfg.functional = config::FunctionalSection { name: Some(f.clone()), file: None };
    }
    if let Some(f) = &a.functional_file {
        cfg.functional = config::FunctionalSection { name: None, file: Some(f.clone()) };
    }
    let r = &mut cfg.relaxation;
    if a.level.is_some() {
        r.level = a.level.clone();
    }
    if a.sequential {
        r.flags = Some("sequential".into());
    }
    if a.plain {
        r.flags = Some("plain".into());
    }
    if a.local {
        r.flags = Some("local".into());
    }
    if a.basis.is_some() {
        r.basis = a.basis.clone();
    }
    if a.behavior.is_some() {
        r.behavior = a.behavior.clone();
    }
    if a.guess.is_some() {
        r.guess = a.guess.clone();
    }
    let s = &mut cfg.solver;
    s.gap_tol = a.gap_tol.or(s.gap_tol);
    s.feas_tol = a.feas_tol.or(s.feas_tol);
    s.max_iter = a.max_iter.or(s.max_iter);
    if a.verbose {
        s.verbose = Some(true);
    }
    if a.output.is_some() {
        cfg.output.path = a.output.clone();
    }
    apply_strategy(cfg, &a.strategy);
}

fn apply_strategy(cfg: &mut RunConfig, a: &StrategyArgs) {
    let table = cfg.strategy.get_or_insert_with(toml::Table::new);
    if let Some(s) = &a.strategy {
        table.clear();
        if ["weak", "chsh", "gallego"].contains(&s.as_str()) {
            table.insert("name".into(), toml::Value::String(s.clone()));
        } else {
            table.insert("file".into(), toml::Value::String(s.clone()));
        }
    }
    if let Some(eta) = a.eta {
        table.insert("eta".into(), toml::Value::Float(eta));
    }
    if let Some(eps) = a.epsilon {
        table.insert("epsilon".into(), toml::Value::Float(eps));
    }
    if table.is_empty() {
        cfg.strategy = None;
    }
}
