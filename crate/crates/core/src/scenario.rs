//! Sequential Bell scenarios, behaviors and linear Bell functionals.
//!
//! A scenario has exactly two parties, `A` and `B`. Each party performs an
//! ordered sequence of measurements; at every step the number of outcomes may
//! depend on that step's input. A behavior is the full table
//! `P(a⃗, b⃗ | x⃗, y⃗)` over all input and output sequences.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for the normalization and no-signalling checks.
pub const BEHAVIOR_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Party {
    A,
    B,
}

impl Party {
    pub fn index(self) -> usize {
        match self {
            Party::A => 0,
            Party::B => 1,
        }
    }

    pub fn other(self) -> Party {
        match self {
            Party::A => Party::B,
            Party::B => Party::A,
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::A => f.write_str("A"),
            Party::B => f.write_str("B"),
        }
    }
}

/// One measurement step: entry `j` is the number of outcomes for input `j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepSpec {
    pub outputs_per_input: Vec<usize>,
}

impl StepSpec {
    pub fn new(outputs_per_input: Vec<usize>) -> Result<Self> {
        if outputs_per_input.is_empty() {
            return Err(Error::InvalidParameter("a step needs at least one input".into()));
        }
        if outputs_per_input.iter().any(|&o| o == 0) {
            return Err(Error::InvalidParameter("every input needs at least one outcome".into()));
        }
        Ok(Self { outputs_per_input })
    }

    /// `inputs` inputs, each with `outputs` outcomes.
    pub fn uniform(inputs: usize, outputs: usize) -> Result<Self> {
        Self::new(vec![outputs; inputs])
    }

    pub fn inputs(&self) -> usize {
        self.outputs_per_input.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartySpec {
    pub steps: Vec<StepSpec>,
}

impl PartySpec {
    pub fn new(steps: Vec<StepSpec>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidParameter("a party needs at least one step".into()));
        }
        Ok(Self { steps })
    }

    /// Sequence length `n`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// All input sequences in lexicographic order.
    pub fn input_tuples(&self) -> Vec<Vec<usize>> {
        let radices: Vec<usize> = self.steps.iter().map(StepSpec::inputs).collect();
        mixed_radix(&radices)
    }

    /// All output sequences compatible with `inputs`, in lexicographic order.
    pub fn output_tuples(&self, inputs: &[usize]) -> Vec<Vec<usize>> {
        let radices: Vec<usize> = self
            .steps
            .iter()
            .zip(inputs)
            .map(|(s, &x)| s.outputs_per_input[x])
            .collect();
        mixed_radix(&radices)
    }

    pub fn is_valid_input(&self, inputs: &[usize]) -> bool {
        inputs.len() == self.len()
            && self.steps.iter().zip(inputs).all(|(s, &x)| x < s.inputs())
    }

    pub fn is_valid_event(&self, inputs: &[usize], outputs: &[usize]) -> bool {
        self.is_valid_input(inputs)
            && outputs.len() == self.len()
            && self
                .steps
                .iter()
                .zip(inputs.iter().zip(outputs))
                .all(|(s, (&x, &a))| a < s.outputs_per_input[x])
    }

    /// Every (input sequence, output sequence) pair, inputs outermost.
    pub fn events(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut out = Vec::new();
        for x in self.input_tuples() {
            for a in self.output_tuples(&x) {
                out.push((x.clone(), a));
            }
        }
        out
    }
}

/// All tuples `t` with `t[i] < radices[i]`, lexicographically ordered.
pub(crate) fn mixed_radix(radices: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = radices.iter().product();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let mut cur = vec![0usize; radices.len()];
    loop {
        out.push(cur.clone());
        let mut i = radices.len();
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] < radices[i] {
                break;
            }
            cur[i] = 0;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub parties: [PartySpec; 2],
}

impl ScenarioSpec {
    pub fn new(a: PartySpec, b: PartySpec) -> Self {
        Self { parties: [a, b] }
    }

    pub fn from_parties(parties: Vec<PartySpec>) -> Result<Self> {
        let [a, b]: [PartySpec; 2] = parties.try_into().map_err(|v: Vec<PartySpec>| {
            Error::InvalidParameter(format!("exactly two parties are supported, got {}", v.len()))
        })?;
        Ok(Self::new(a, b))
    }

    /// Build from per-party, per-step outcome lists.
    pub fn from_outputs(a: &[&[usize]], b: &[&[usize]]) -> Result<Self> {
        let party = |steps: &[&[usize]]| -> Result<PartySpec> {
            PartySpec::new(
                steps
                    .iter()
                    .map(|s| StepSpec::new(s.to_vec()))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        Ok(Self::new(party(a)?, party(b)?))
    }

    /// Both parties: one step, two inputs, two outcomes.
    pub fn chsh() -> Self {
        Self::from_outputs(&[&[2, 2]], &[&[2, 2]]).expect("static scenario")
    }

    /// Alice one dichotomic step; Bob two dichotomic steps.
    pub fn gallego() -> Self {
        Self::from_outputs(&[&[2, 2]], &[&[2, 2], &[2, 2]]).expect("static scenario")
    }

    /// Alice one dichotomic step; Bob a dichotomic step followed by a step
    /// whose third input has three outcomes.
    pub fn randomness() -> Self {
        Self::from_outputs(&[&[2, 2]], &[&[2, 2], &[2, 2, 3]]).expect("static scenario")
    }

    pub fn party(&self, p: Party) -> &PartySpec {
        &self.parties[p.index()]
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in [Party::A, Party::B].into_iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{p}:")?;
            for s in &self.party(p).steps {
                write!(f, " {:?}", s.outputs_per_input)?;
            }
        }
        Ok(())
    }
}

/// Index arithmetic for the ragged behavior table.
#[derive(Clone, Debug)]
pub struct Layout {
    pub inputs: [Vec<Vec<usize>>; 2],
    pub outputs: [Vec<Vec<Vec<usize>>>; 2],
    offsets: Vec<usize>,
    len: usize,
}

impl Layout {
    fn new(s: &ScenarioSpec) -> Self {
        let inputs = [s.parties[0].input_tuples(), s.parties[1].input_tuples()];
        let outputs = [
            inputs[0].iter().map(|x| s.parties[0].output_tuples(x)).collect::<Vec<_>>(),
            inputs[1].iter().map(|y| s.parties[1].output_tuples(y)).collect::<Vec<_>>(),
        ];
        let mut offsets = Vec::with_capacity(inputs[0].len() * inputs[1].len());
        let mut len = 0;
        for oa in &outputs[0] {
            for ob in &outputs[1] {
                offsets.push(len);
                len += oa.len() * ob.len();
            }
        }
        Self { inputs, outputs, offsets, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Flat position of (input index, input index, output index, output index).
    pub fn flat(&self, ix: usize, iy: usize, ia: usize, ib: usize) -> usize {
        let nb = self.outputs[1][iy].len();
        self.offsets[ix * self.inputs[1].len() + iy] + ia * nb + ib
    }

    pub fn input_index(&self, p: Party, x: &[usize]) -> Option<usize> {
        self.inputs[p.index()].binary_search_by(|t| t.as_slice().cmp(x)).ok()
    }

    pub fn output_index(&self, p: Party, ix: usize, a: &[usize]) -> Option<usize> {
        self.outputs[p.index()][ix].binary_search_by(|t| t.as_slice().cmp(a)).ok()
    }

    pub fn locate(&self, e: &Event) -> Option<usize> {
        let ix = self.input_index(Party::A, &e.x)?;
        let iy = self.input_index(Party::B, &e.y)?;
        let ia = self.output_index(Party::A, ix, &e.a)?;
        let ib = self.output_index(Party::B, iy, &e.b)?;
        Some(self.flat(ix, iy, ia, ib))
    }

    /// Every event in table order.
    pub fn events(&self) -> Vec<Event> {
        let mut out = Vec::with_capacity(self.len);
        for (ix, x) in self.inputs[0].iter().enumerate() {
            for (iy, y) in self.inputs[1].iter().enumerate() {
                for a in &self.outputs[0][ix] {
                    for b in &self.outputs[1][iy] {
                        out.push(Event { x: x.clone(), y: y.clone(), a: a.clone(), b: b.clone() });
                    }
                }
            }
        }
        out
    }
}

/// Index `(x⃗, y⃗, a⃗, b⃗)` into a behavior.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Event {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl Event {
    pub fn new(x: &[usize], y: &[usize], a: &[usize], b: &[usize]) -> Self {
        Self { x: x.to_vec(), y: y.to_vec(), a: a.to_vec(), b: b.to_vec() }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ; {} ; {} ; {}",
            join(&self.x),
            join(&self.y),
            join(&self.a),
            join(&self.b)
        )
    }
}

fn join(t: &[usize]) -> String {
    t.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Probability table `P(a⃗, b⃗ | x⃗, y⃗)` laid out as [`Layout`] describes.
#[derive(Clone, Debug, PartialEq)]
pub struct Behavior {
    pub scenario: ScenarioSpec,
    pub table: Vec<f64>,
}

impl Behavior {
    pub fn new(scenario: ScenarioSpec, table: Vec<f64>) -> Result<Self> {
        let len = scenario.layout().len();
        if table.len() != len {
            return Err(Error::Shape(format!("table has {} entries, scenario needs {len}", table.len())));
        }
        Ok(Self { scenario, table })
    }

    pub fn from_fn(scenario: ScenarioSpec, mut f: impl FnMut(&Event) -> f64) -> Self {
        let table = scenario.layout().events().iter().map(&mut f).collect();
        Self { scenario, table }
    }

    /// Every output sequence equally likely for every input pair.
    pub fn uniform(scenario: ScenarioSpec) -> Self {
        let layout = scenario.layout();
        let mut table = vec![0.0; layout.len()];
        for ix in 0..layout.inputs[0].len() {
            for iy in 0..layout.inputs[1].len() {
                let na = layout.outputs[0][ix].len();
                let nb = layout.outputs[1][iy].len();
                let p = 1.0 / (na * nb) as f64;
                for ia in 0..na {
                    for ib in 0..nb {
                        table[layout.flat(ix, iy, ia, ib)] = p;
                    }
                }
            }
        }
        Self { scenario, table }
    }

    pub fn get(&self, e: &Event) -> Option<f64> {
        self.scenario.layout().locate(e).map(|i| self.table[i])
    }

    /// Pointwise `w·self + (1-w)·other`.
    pub fn mix(&self, other: &Behavior, w: f64) -> Result<Behavior> {
        if self.scenario != other.scenario {
            return Err(Error::ScenarioMismatch("cannot mix behaviors of different scenarios".into()));
        }
        let table = self.table.iter().zip(&other.table).map(|(p, q)| w * p + (1.0 - w) * q).collect();
        Ok(Behavior { scenario: self.scenario.clone(), table })
    }

    /// Write the text interchange format.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# sequential behavior")?;
        for p in [Party::A, Party::B] {
            let steps: Vec<String> = self
                .scenario
                .party(p)
                .steps
                .iter()
                .map(|s| join(&s.outputs_per_input))
                .collect();
            writeln!(w, "party {p} {}", steps.join(" | "))?;
        }
        writeln!(w, "x ; y ; a ; b ; p")?;
        for (e, p) in self.scenario.layout().events().iter().zip(&self.table) {
            writeln!(w, "{e} ; {p:e}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Parse the text interchange format. Records that are absent stay zero.
    pub fn read_from(r: impl BufRead) -> Result<Behavior> {
        let mut parties: [Option<PartySpec>; 2] = [None, None];
        let mut records: Vec<(usize, Event, f64)> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.replace(' ', "") == "x;y;a;b;p" {
                continue;
            }
            let perr = |message: String| Error::Parse { line: lineno, message };
            if let Some(rest) = line.strip_prefix("party") {
                let rest = rest.trim();
                let (name, steps) = rest.split_once(char::is_whitespace).ok_or_else(|| perr("expected `party <A|B> <steps>`".into()))?;
                let party = match name {
                    "A" => Party::A,
                    "B" => Party::B,
                    other => return Err(perr(format!("unknown party `{other}`"))),
                };
                let steps = steps
                    .split('|')
                    .map(|s| {
                        let outs = parse_tuple(s).map_err(&perr)?;
                        StepSpec::new(outs).map_err(|e| perr(e.to_string()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                parties[party.index()] = Some(PartySpec::new(steps).map_err(|e| perr(e.to_string()))?);
                continue;
            }
            let fields: Vec<&str> = line.split(';').collect();
            if fields.len() != 5 {
                return Err(perr(format!("expected 5 `;`-separated fields, got {}", fields.len())));
            }
            let e = Event {
                x: parse_tuple(fields[0]).map_err(&perr)?,
                y: parse_tuple(fields[1]).map_err(&perr)?,
                a: parse_tuple(fields[2]).map_err(&perr)?,
                b: parse_tuple(fields[3]).map_err(&perr)?,
            };
            let p: f64 = fields[4].trim().parse().map_err(|_| perr(format!("bad probability `{}`", fields[4].trim())))?;
            records.push((lineno, e, p));
        }
        let [a, b] = parties;
        let scenario = ScenarioSpec::new(
            a.ok_or(Error::Parse { line: 0, message: "missing `party A` header".into() })?,
            b.ok_or(Error::Parse { line: 0, message: "missing `party B` header".into() })?,
        );
        let layout = scenario.layout();
        let mut table = vec![0.0; layout.len()];
        let mut seen = vec![false; layout.len()];
        for (line, e, p) in records {
            let i = layout
                .locate(&e)
                .ok_or_else(|| Error::Parse { line, message: format!("event `{e}` is not valid for the scenario") })?;
            if seen[i] {
                return Err(Error::Parse { line, message: format!("duplicate record for `{e}`") });
            }
            seen[i] = true;
            table[i] = p;
        }
        Ok(Behavior { scenario, table })
    }

    pub fn from_text(s: &str) -> Result<Behavior> {
        Self::read_from(s.as_bytes())
    }
}

fn parse_tuple(s: &str) -> std::result::Result<Vec<usize>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty tuple".into());
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad index `{}`", t.trim())))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum ConstraintKind {
    Range,
    Normalization,
    /// Marginal of the first `prefix` outputs of `party` depends on later inputs.
    OneWayNoSignalling { party: Party, prefix: usize },
    /// Marginal of `party` depends on the other party's inputs.
    CrossPartyNoSignalling { party: Party },
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintKind::Range => f.write_str("range"),
            ConstraintKind::Normalization => f.write_str("normalization"),
            ConstraintKind::OneWayNoSignalling { party, prefix } => {
                write!(f, "one-way no-signalling ({party}, prefix {prefix})")
            }
            ConstraintKind::CrossPartyNoSignalling { party } => write!(f, "cross-party no-signalling ({party})"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub kind: ConstraintKind,
    pub location: String,
    pub residual: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: residual {:.3e}", self.kind, self.location, self.residual)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.violations.iter().map(|v| v.residual).fold(0.0, f64::max)
    }

    pub fn worst(&self, pred: impl Fn(&ConstraintKind) -> bool) -> Option<&Violation> {
        self.violations
            .iter()
            .filter(|v| pred(&v.kind))
            .max_by(|a, b| a.residual.total_cmp(&b.residual))
    }
}

/// Check range, normalization, one-way and cross-party no-signalling.
pub fn validate_behavior(b: &Behavior) -> Result<ValidationReport> {
    let layout = b.scenario.layout();
    if b.table.len() != layout.len() {
        return Err(Error::Shape(format!(
            "table has {} entries, scenario needs {}",
            b.table.len(),
            layout.len()
        )));
    }
    let mut report = ValidationReport::default();
    let nx = layout.inputs[0].len();
    let ny = layout.inputs[1].len();

    for (e, &p) in layout.events().iter().zip(&b.table) {
        if !(-BEHAVIOR_TOL..=1.0 + BEHAVIOR_TOL).contains(&p) || !p.is_finite() {
            report.violations.push(Violation {
                kind: ConstraintKind::Range,
                location: e.to_string(),
                residual: if p < 0.0 { -p } else { p - 1.0 },
            });
        }
    }

    for ix in 0..nx {
        for iy in 0..ny {
            let mut s = 0.0;
            for ia in 0..layout.outputs[0][ix].len() {
                for ib in 0..layout.outputs[1][iy].len() {
                    s += b.table[layout.flat(ix, iy, ia, ib)];
                }
            }
            if (s - 1.0).abs() > BEHAVIOR_TOL {
                report.violations.push(Violation {
                    kind: ConstraintKind::Normalization,
                    location: format!("x={} y={}", join(&layout.inputs[0][ix]), join(&layout.inputs[1][iy])),
                    residual: (s - 1.0).abs(),
                });
            }
        }
    }

    for party in [Party::A, Party::B] {
        one_way_checks(b, &layout, party, &mut report);
        cross_party_check(b, &layout, party, &mut report);
    }
    Ok(report)
}

/// `P(own prefix, other full | own inputs, other inputs)` must not depend on
/// own inputs after the prefix.
fn one_way_checks(b: &Behavior, layout: &Layout, party: Party, report: &mut ValidationReport) {
    let me = party.index();
    let them = party.other().index();
    let n = b.scenario.party(party).len();
    for k in 1..n {
        for (it, t_in) in layout.inputs[them].iter().enumerate() {
            for (ot, t_out) in layout.outputs[them][it].iter().enumerate() {
                // prefix (inputs, outputs) -> list of marginal values over own input suffixes
                let mut groups: BTreeMap<(Vec<usize>, Vec<usize>), Vec<f64>> = BTreeMap::new();
                for (im, m_in) in layout.inputs[me].iter().enumerate() {
                    let mut marg: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
                    for (om, m_out) in layout.outputs[me][im].iter().enumerate() {
                        let p = match party {
                            Party::A => b.table[layout.flat(im, it, om, ot)],
                            Party::B => b.table[layout.flat(it, im, ot, om)],
                        };
                        *marg.entry(m_out[..k].to_vec()).or_default() += p;
                    }
                    for (pre_out, v) in marg {
                        groups.entry((m_in[..k].to_vec(), pre_out)).or_default().push(v);
                    }
                }
                for ((pre_in, pre_out), vals) in groups {
                    let (lo, hi) = vals.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
                    if hi - lo > BEHAVIOR_TOL {
                        report.violations.push(Violation {
                            kind: ConstraintKind::OneWayNoSignalling { party, prefix: k },
                            location: format!(
                                "{party} inputs {}.. outputs {}.. | {} inputs {} outputs {}",
                                join(&pre_in),
                                join(&pre_out),
                                party.other(),
                                join(t_in),
                                join(t_out)
                            ),
                            residual: hi - lo,
                        });
                    }
                }
            }
        }
    }
}

fn cross_party_check(b: &Behavior, layout: &Layout, party: Party, report: &mut ValidationReport) {
    let me = party.index();
    let them = party.other().index();
    for (im, m_in) in layout.inputs[me].iter().enumerate() {
        for (om, m_out) in layout.outputs[me][im].iter().enumerate() {
            let mut lo = f64::MAX;
            let mut hi = f64::MIN;
            for it in 0..layout.inputs[them].len() {
                let mut s = 0.0;
                for ot in 0..layout.outputs[them][it].len() {
                    s += match party {
                        Party::A => b.table[layout.flat(im, it, om, ot)],
                        Party::B => b.table[layout.flat(it, im, ot, om)],
                    };
                }
                lo = lo.min(s);
                hi = hi.max(s);
            }
            if hi - lo > BEHAVIOR_TOL {
                report.violations.push(Violation {
                    kind: ConstraintKind::CrossPartyNoSignalling { party },
                    location: format!("{party} inputs {} outputs {}", join(m_in), join(m_out)),
                    residual: hi - lo,
                });
            }
        }
    }
}

/// Linear functional `Σ c·P(a⃗,b⃗|x⃗,y⃗) + offset`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BellFunctional {
    pub scenario: ScenarioSpec,
    pub coefficients: BTreeMap<Event, f64>,
    pub offset: f64,
}

impl BellFunctional {
    pub fn new(scenario: ScenarioSpec, coefficients: BTreeMap<Event, f64>, offset: f64) -> Result<Self> {
        let layout = scenario.layout();
        if let Some(bad) = coefficients.keys().find(|e| layout.locate(e).is_none()) {
            return Err(Error::InvalidIndex(format!("event `{bad}` is not valid for the scenario")));
        }
        Ok(Self { scenario, coefficients, offset })
    }

    pub fn zero(scenario: ScenarioSpec) -> Self {
        Self { scenario, coefficients: BTreeMap::new(), offset: 0.0 }
    }

    fn add(&mut self, e: Event, c: f64) {
        *self.coefficients.entry(e).or_default() += c;
    }

    fn prune(mut self) -> Self {
        self.coefficients.retain(|_, c| *c != 0.0);
        self
    }
}

pub fn evaluate_functional(f: &BellFunctional, b: &Behavior) -> Result<f64> {
    if f.scenario != b.scenario {
        return Err(Error::ScenarioMismatch(format!("functional is for {}, behavior for {}", f.scenario, b.scenario)));
    }
    let layout = b.scenario.layout();
    let mut v = f.offset;
    for (e, c) in &f.coefficients {
        let i = layout
            .locate(e)
            .ok_or_else(|| Error::InvalidIndex(format!("event `{e}` is not valid for the scenario")))?;
        v += c * b.table[i];
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NamedFunctional {
    Chsh,
    ChshAb1,
    ChshAb2,
    GallegoI,
}

impl NamedFunctional {
    pub const ALL: [NamedFunctional; 4] =
        [NamedFunctional::Chsh, NamedFunctional::ChshAb1, NamedFunctional::ChshAb2, NamedFunctional::GallegoI];

    pub fn name(self) -> &'static str {
        match self {
            NamedFunctional::Chsh => "chsh",
            NamedFunctional::ChshAb1 => "chsh_ab1",
            NamedFunctional::ChshAb2 => "chsh_ab2",
            NamedFunctional::GallegoI => "gallego_I",
        }
    }

    /// The scenario the functional is defined on.
    pub fn natural_scenario(self) -> ScenarioSpec {
        match self {
            NamedFunctional::Chsh => ScenarioSpec::chsh(),
            _ => ScenarioSpec::gallego(),
        }
    }

    pub fn build(self, scenario: &ScenarioSpec) -> Result<BellFunctional> {
        if *scenario != self.natural_scenario() {
            return Err(Error::Shape(format!(
                "{} needs scenario {}, got {}",
                self.name(),
                self.natural_scenario(),
                scenario
            )));
        }
        Ok(match self {
            NamedFunctional::Chsh => chsh(scenario.clone()),
            NamedFunctional::ChshAb1 => chsh_ab1(scenario.clone()),
            NamedFunctional::ChshAb2 => chsh_ab2(scenario.clone()),
            NamedFunctional::GallegoI => gallego_i(scenario.clone()),
        })
    }
}

impl FromStr for NamedFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NamedFunctional::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown functional `{s}`")))
    }
}

impl fmt::Display for NamedFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every named functional whose natural scenario is `scenario`.
pub fn named_functionals(scenario: &ScenarioSpec) -> Vec<(NamedFunctional, BellFunctional)> {
    NamedFunctional::ALL
        .into_iter()
        .filter_map(|n| n.build(scenario).ok().map(|f| (n, f)))
        .collect()
}

/// `±1` value of outcome `o` (0 ↦ +1, 1 ↦ −1).
fn sign(o: usize) -> f64 {
    if o % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn chsh(s: ScenarioSpec) -> BellFunctional {
    let mut f = BellFunctional::zero(s);
    for x in 0..2 {
        for y in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    f.add(Event::new(&[x], &[y], &[a], &[b]), sign(a + b + x * y));
                }
            }
        }
    }
    f.prune()
}

/// CHSH between Alice and the first Bob. The first Bob's marginal is read
/// off with the second Bob's input averaged uniformly.
fn chsh_ab1(s: ScenarioSpec) -> BellFunctional {
    let mut f = BellFunctional::zero(s);
    for x in 0..2 {
        for y1 in 0..2 {
            for y2 in 0..2 {
                for a in 0..2 {
                    for b1 in 0..2 {
                        for b2 in 0..2 {
                            f.add(Event::new(&[x], &[y1, y2], &[a], &[b1, b2]), 0.5 * sign(a + b1 + x * y1));
                        }
                    }
                }
            }
        }
    }
    f.prune()
}

/// CHSH between Alice and the second Bob, averaged over `b1` and a uniform `y1`.
fn chsh_ab2(s: ScenarioSpec) -> BellFunctional {
    let mut f = BellFunctional::zero(s);
    for x in 0..2 {
        for y1 in 0..2 {
            for y2 in 0..2 {
                for a in 0..2 {
                    for b1 in 0..2 {
                        for b2 in 0..2 {
                            f.add(Event::new(&[x], &[y1, y2], &[a], &[b1, b2]), 0.5 * sign(a + b2 + x * y2));
                        }
                    }
                }
            }
        }
    }
    f.prune()
}

/// `⟨A₀(B−B′) − A₁(B+B′)⟩` with
/// `B = ½[(1+B¹₀)B²₀₁ − (1−B¹₀)B²₀₀]` and `B′ = ½[(1−B¹₁)B²₁₁ + (1+B¹₁)B²₁₀]`.
fn gallego_i(s: ScenarioSpec) -> BellFunctional {
    let mut f = BellFunctional::zero(s);
    // (x, y1, y2, weight on ⟨A_x B²⟩, weight on ⟨A_x B¹ B²⟩)
    let mut terms: Vec<(usize, usize, usize, f64, f64)> = Vec::new();
    // ⟨A_x B⟩ and ⟨A_x B′⟩ expansions
    let b_terms = [(0, 1, 0.5, 0.5), (0, 0, -0.5, 0.5)];
    let bp_terms = [(1, 1, 0.5, -0.5), (1, 0, 0.5, 0.5)];
    // A₀B − A₀B′ − A₁B − A₁B′
    for (x, wb, wbp) in [(0usize, 1.0, -1.0), (1, -1.0, -1.0)] {
        for &(y1, y2, c2, c12) in &b_terms {
            terms.push((x, y1, y2, wb * c2, wb * c12));
        }
        for &(y1, y2, c2, c12) in &bp_terms {
            terms.push((x, y1, y2, wbp * c2, wbp * c12));
        }
    }
    for (x, y1, y2, c2, c12) in terms {
        for a in 0..2 {
            for b1 in 0..2 {
                for b2 in 0..2 {
                    let c = c2 * sign(a + b2) + c12 * sign(a + b1 + b2);
                    f.add(Event::new(&[x], &[y1, y2], &[a], &[b1, b2]), c);
                }
            }
        }
    }
    f.prune()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deterministic(s: &ScenarioSpec, fa: impl Fn(&[usize]) -> Vec<usize>, fb: impl Fn(&[usize]) -> Vec<usize>) -> Behavior {
        Behavior::from_fn(s.clone(), |e| if fa(&e.x) == e.a && fb(&e.y) == e.b { 1.0 } else { 0.0 })
    }

    #[test]
    fn uniform_behavior_is_valid() {
        for s in [ScenarioSpec::chsh(), ScenarioSpec::gallego(), ScenarioSpec::randomness()] {
            let r = validate_behavior(&Behavior::uniform(s)).unwrap();
            assert!(r.is_empty(), "{:?}", r.violations);
        }
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let b = Behavior { scenario: ScenarioSpec::chsh(), table: vec![0.25; 3] };
        assert!(matches!(validate_behavior(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn one_way_violation_is_reported_with_its_residual() {
        // Shift 0.1 of mass so that P(b1=0 | y=(0,1)) exceeds P(b1=0 | y=(0,0)).
        let s = ScenarioSpec::gallego();
        let mut b = Behavior::uniform(s.clone());
        let layout = s.layout();
        let from = layout.locate(&Event::new(&[0], &[0, 1], &[0], &[1, 0])).unwrap();
        let to = layout.locate(&Event::new(&[0], &[0, 1], &[0], &[0, 0])).unwrap();
        b.table[from] -= 0.1;
        b.table[to] += 0.1;
        let r = validate_behavior(&b).unwrap();
        let v = r
            .worst(|k| matches!(k, ConstraintKind::OneWayNoSignalling { party: Party::B, prefix: 1 }))
            .expect("one-way violation reported");
        assert!((v.residual - 0.1).abs() < 1e-12);
        assert!(!r.violations.iter().any(|v| v.kind == ConstraintKind::Normalization));
    }

    #[test]
    fn normalization_and_range_violations() {
        let mut b = Behavior::uniform(ScenarioSpec::chsh());
        b.table[0] = -0.25;
        let r = validate_behavior(&b).unwrap();
        assert!(r.violations.iter().any(|v| v.kind == ConstraintKind::Range));
        assert!(r.violations.iter().any(|v| v.kind == ConstraintKind::Normalization && (v.residual - 0.5).abs() < 1e-12));
    }

    #[test]
    fn chsh_ab1_on_all_zero_outputs_is_two() {
        let s = ScenarioSpec::gallego();
        let b = deterministic(&s, |_| vec![0], |_| vec![0, 0]);
        let f = NamedFunctional::ChshAb1.build(&s).unwrap();
        assert!((evaluate_functional(&f, &b).unwrap() - 2.0).abs() < 1e-12);
        let c = NamedFunctional::Chsh.build(&ScenarioSpec::chsh()).unwrap();
        let b = deterministic(&ScenarioSpec::chsh(), |_| vec![0], |_| vec![0]);
        assert!((evaluate_functional(&c, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn chsh_ab2_collapses_to_plain_chsh_when_bob2_ignores_bob1() {
        // Bob2 answers with a fixed function of y2, Bob1 answers with something of y1.
        let s = ScenarioSpec::gallego();
        let b = deterministic(&s, |x| vec![x[0]], |y| vec![y[0], 1 - y[1]]);
        let f = NamedFunctional::ChshAb2.build(&s).unwrap();
        let plain = NamedFunctional::Chsh.build(&ScenarioSpec::chsh()).unwrap();
        let b2 = deterministic(&ScenarioSpec::chsh(), |x| vec![x[0]], |y| vec![1 - y[0]]);
        let v = evaluate_functional(&f, &b).unwrap();
        let w = evaluate_functional(&plain, &b2).unwrap();
        assert!((v - w).abs() < 1e-12, "{v} vs {w}");
    }

    #[test]
    fn gallego_respects_scenario_shape() {
        assert!(NamedFunctional::GallegoI.build(&ScenarioSpec::chsh()).is_err());
        assert_eq!(named_functionals(&ScenarioSpec::gallego()).len(), 3);
        assert_eq!(named_functionals(&ScenarioSpec::chsh()).len(), 1);
    }

    #[test]
    fn functional_scenario_mismatch() {
        let f = NamedFunctional::Chsh.build(&ScenarioSpec::chsh()).unwrap();
        assert!(evaluate_functional(&f, &Behavior::uniform(ScenarioSpec::gallego())).is_err());
    }

    #[test]
    fn text_round_trip() {
        let s = ScenarioSpec::randomness();
        let b = Behavior::from_fn(s, |e| 1.0 / 3.0 + e.x[0] as f64 * 1e-17 + e.b[1] as f64 * 0.1);
        let back = Behavior::from_text(&b.to_text()).unwrap();
        assert_eq!(back.scenario, b.scenario);
        for (p, q) in b.table.iter().zip(&back.table) {
            assert!((p - q).abs() <= 1e-15);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "party A 2,2\nparty B 2,2\n0 ; 0 ; 0 ; 5 ; 0.5\n";
        match Behavior::from_text(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_outputs_are_enumerated() {
        let s = ScenarioSpec::randomness();
        let bob = s.party(Party::B);
        assert_eq!(bob.input_tuples().len(), 6);
        assert_eq!(bob.output_tuples(&[1, 2]).len(), 6);
        assert_eq!(bob.events().len(), 28);
        assert_eq!(s.layout().len(), 4 * 28);
    }
}
