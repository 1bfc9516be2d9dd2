//! Run configuration: a TOML file with sections `scenario`, `strategy`,
//! `functional`, `relaxation`, `solver` and `output`. Every field can be
//! overridden on the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use seqnpa::moment::RelaxationFlags;
use seqnpa::ncalg::{BasisMode, LevelSpec};
use seqnpa::qsim::StrategyConfig;
use seqnpa::scenario::{BellFunctional, Event, NamedFunctional, PartySpec, ScenarioSpec, StepSpec};
use seqnpa::solver::SolverConfig;

use crate::CliError;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: ScenarioSection,
    /// inline strategy fields, or `file = "..."`
    pub strategy: Option<toml::Table>,
    #[serde(default)]
    pub functional: FunctionalSection,
    #[serde(default)]
    pub relaxation: RelaxationSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// `chsh`, `gallego` or `randomness`
    pub name: Option<String>,
    /// per step, the output count of each input
    pub alice: Option<Vec<Vec<usize>>>,
    pub bob: Option<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalSection {
    pub name: Option<String>,
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationSection {
    pub level: Option<String>,
    /// `plain`, `sequential` or `local`
    pub flags: Option<String>,
    /// `full` or `collins-gisin`
    pub basis: Option<String>,
    /// behavior file to pin for a guessing program
    pub behavior: Option<PathBuf>,
    /// Bob's guessed input sequence
    pub guess: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub gap_tol: Option<f64>,
    pub feas_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub verbose: Option<bool>,
    pub workers: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
    pub dir: Option<PathBuf>,
}

/// Functional file: `offset` plus a list of `{x, y, a, b, coefficient}` terms.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionalFile {
    #[serde(default)]
    offset: f64,
    terms: Vec<TermEntry>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermEntry {
    x: Vec<usize>,
    y: Vec<usize>,
    a: Vec<usize>,
    b: Vec<usize>,
    coefficient: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn scenario(&self) -> Result<Option<ScenarioSpec>, CliError> {
        let s = &self.scenario;
        match (&s.name, &s.alice, &s.bob) {
            (None, None, None) => Ok(None),
            (Some(n), None, None) => named_scenario(n).map(Some),
            (None, Some(a), Some(b)) => {
                let party = |steps: &[Vec<usize>], who: &str| -> Result<PartySpec, CliError> {
                    let steps = steps
                        .iter()
                        .map(|o| StepSpec::new(o.clone()))
                        .collect::<seqnpa::Result<Vec<_>>>()
                        .map_err(|e| CliError::config(format!("scenario.{who}: {e}")))?;
                    PartySpec::new(steps).map_err(|e| CliError::config(format!("scenario.{who}: {e}")))
                };
                Ok(Some(ScenarioSpec::new(party(a, "alice")?, party(b, "bob")?)))
            }
            _ => Err(CliError::config("scenario: give either `name` or both `alice` and `bob`")),
        }
    }

    /// The functional and the scenario it lives on.
    pub fn functional(&self, scenario: Option<&ScenarioSpec>) -> Result<(ScenarioSpec, BellFunctional), CliError> {
        let f = &self.functional;
        match (&f.name, &f.file) {
            (Some(n), None) => {
                let named: NamedFunctional = n.parse().map_err(|e| CliError::config(format!("functional.name: {e}")))?;
                let s = scenario.cloned().unwrap_or_else(|| named.natural_scenario());
                let bf = named.build(&s).map_err(|e| CliError::config(format!("functional.name: {e}")))?;
                Ok((s, bf))
            }
            (None, Some(path)) => {
                let s = scenario.cloned().ok_or_else(|| CliError::config("functional.file needs a scenario"))?;
                let text =
                    std::fs::read_to_string(path).map_err(|e| CliError::config(format!("functional.file: {e}")))?;
                let ff: FunctionalFile =
                    toml::from_str(&text).map_err(|e| CliError::config(format!("functional.file: {e}")))?;
                let mut coeffs = BTreeMap::new();
                for t in ff.terms {
                    *coeffs.entry(Event::new(&t.x, &t.y, &t.a, &t.b)).or_insert(0.0) += t.coefficient;
                }
                let bf = BellFunctional::new(s.clone(), coeffs, ff.offset)
                    .map_err(|e| CliError::config(format!("functional.file: {e}")))?;
                Ok((s, bf))
            }
            (None, None) => Err(CliError::config("functional: missing `name` or `file`")),
            _ => Err(CliError::config("functional: give only one of `name` and `file`")),
        }
    }

    pub fn level(&self) -> Result<LevelSpec, CliError> {
        let text = self.relaxation.level.as_deref().unwrap_or("1");
        text.parse().map_err(|e| CliError::config(format!("relaxation.level: {e}")))
    }

    pub fn flags(&self) -> Result<RelaxationFlags, CliError> {
        let mut flags = match self.relaxation.flags.as_deref().unwrap_or("sequential") {
            "plain" => RelaxationFlags::plain(),
            "sequential" => RelaxationFlags::sequential(),
            "local" => RelaxationFlags::local(),
            other => {
                return Err(CliError::config(format!(
                    "relaxation.flags: unknown value `{other}` (expected plain, sequential or local)"
                )))
            }
        };
        flags.basis = match self.relaxation.basis.as_deref().unwrap_or("full") {
            "full" => BasisMode::Full,
            "collins-gisin" | "cg" => BasisMode::CollinsGisin,
            other => {
                return Err(CliError::config(format!(
                    "relaxation.basis: unknown value `{other}` (expected full or collins-gisin)"
                )))
            }
        };
        Ok(flags)
    }

    pub fn solver(&self) -> Result<SolverConfig, CliError> {
        let s = &self.solver;
        let d = SolverConfig::default();
        let cfg = SolverConfig {
            gap_tol: s.gap_tol.unwrap_or(d.gap_tol),
            feas_tol: s.feas_tol.unwrap_or(d.feas_tol),
            max_iter: s.max_iter.unwrap_or(d.max_iter),
            verbose: s.verbose.unwrap_or(d.verbose),
        };
        cfg.validate().map_err(|e| CliError::config(format!("solver: {e}")))?;
        Ok(cfg)
    }

    pub fn strategy(&self) -> Result<Option<StrategyConfig>, CliError> {
        let Some(table) = &self.strategy else { return Ok(None) };
        if let Some(file) = table.get("file") {
            let path = file.as_str().ok_or_else(|| CliError::config("strategy.file: expected a path"))?;
            let mut rest = table.clone();
            rest.remove("file");
            let mut cfg = StrategyConfig::load(path).map_err(|e| CliError::config(format!("strategy.file: {e}")))?;
            // inline values override the file
            let over: StrategyConfig =
                rest.try_into().map_err(|e: toml::de::Error| CliError::config(format!("strategy: {e}")))?;
            merge_strategy(&mut cfg, over);
            return Ok(Some(cfg));
        }
        let cfg: StrategyConfig =
            table.clone().try_into().map_err(|e: toml::de::Error| CliError::config(format!("strategy: {e}")))?;
        Ok(Some(cfg))
    }
}

pub fn merge_strategy(base: &mut StrategyConfig, over: StrategyConfig) {
    if over.name.is_some() {
        base.name = over.name;
    }
    if over.eta.is_some() {
        base.eta = over.eta;
    }
    if over.epsilon.is_some() {
        base.epsilon = over.epsilon;
    }
    if over.state.is_some() {
        base.state = over.state;
    }
    if over.alice.is_some() {
        base.alice = over.alice;
    }
    if over.bob.is_some() {
        base.bob = over.bob;
    }
}

pub fn named_scenario(name: &str) -> Result<ScenarioSpec, CliError> {
    match name {
        "chsh" => Ok(ScenarioSpec::chsh()),
        "gallego" => Ok(ScenarioSpec::gallego()),
        "randomness" => Ok(ScenarioSpec::randomness()),
        other => Err(CliError::config(format!(
            "scenario.name: unknown scenario `{other}` (expected chsh, gallego or randomness)"
        ))),
    }
}
