//! Moment-matrix relaxations: index maps, linear equalities, pins,
//! objectives and the multi-block guessing program, plus compilation to a
//! standard-form SDP.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ncalg::{level_set_ids, Alphabet, BasisMode, IdWord, LevelSpec, SymId};
use crate::par;
use crate::scenario::{Behavior, BellFunctional, Event, Party, ScenarioSpec};
use crate::solver::{SdpStandardForm, Sense, Side, SparseSym};

/// Index of a distinct moment inside one block.
pub type KeyId = u32;

/// One symmetric moment matrix `Γ[i][j] = ⟨s_i† s_j⟩`.
#[derive(Clone, Debug)]
pub struct MomentMatrix {
    pub monomials: Vec<IdWord>,
    /// distinct keys in shortlex order; key 0 is the identity
    pub keys: Vec<IdWord>,
    /// row-major `size × size`; `None` marks a fixed zero
    entries: Vec<Option<KeyId>>,
    lookup: HashMap<IdWord, KeyId>,
    /// upper-triangle positions of each key
    positions: Vec<Vec<(u32, u32)>>,
}

impl MomentMatrix {
    pub fn new(alphabet: &Alphabet, monomials: Vec<IdWord>) -> Self {
        let n = monomials.len();
        let rows: Vec<Vec<Option<IdWord>>> = par::map_range(n, |i| {
            (0..n)
                .map(|j| alphabet.product(&monomials[i], &monomials[j]).map(|w| alphabet.key(w)))
                .collect()
        });
        let mut set: HashSet<&IdWord> = HashSet::new();
        for r in &rows {
            set.extend(r.iter().flatten());
        }
        let mut keys: Vec<IdWord> = set.into_iter().cloned().collect();
        keys.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        let lookup: HashMap<IdWord, KeyId> = keys.iter().enumerate().map(|(i, k)| (k.clone(), i as KeyId)).collect();
        let mut entries = Vec::with_capacity(n * n);
        let mut positions = vec![Vec::new(); keys.len()];
        for (i, r) in rows.into_iter().enumerate() {
            for (j, w) in r.into_iter().enumerate() {
                let k = w.map(|w| lookup[&w]);
                if let Some(k) = k {
                    if i <= j {
                        positions[k as usize].push((i as u32, j as u32));
                    }
                }
                entries.push(k);
            }
        }
        Self { monomials, keys, entries, lookup, positions }
    }

    pub fn size(&self) -> usize {
        self.monomials.len()
    }

    pub fn num_keys(&self) -> usize {
        self.keys.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<KeyId> {
        self.entries[i * self.size() + j]
    }

    pub fn key_id(&self, w: &[SymId]) -> Option<KeyId> {
        self.lookup.get(w).copied()
    }

    pub fn positions(&self, k: KeyId) -> &[(u32, u32)] {
        &self.positions[k as usize]
    }

    /// Upper-triangle positions whose entry reduces to zero.
    pub fn fixed_zeros(&self) -> Vec<(usize, usize)> {
        let n = self.size();
        (0..n)
            .flat_map(|i| (i..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.entry(i, j).is_none())
            .collect()
    }

    /// Key id of the identity moment `Γ(0,0)`.
    pub fn identity_key(&self) -> KeyId {
        0
    }
}

/// A term `coefficient · key` in some block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub block: usize,
    pub key: KeyId,
    pub coef: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqualityKind {
    Normalization,
    Sequential,
    Commuting,
    Pin,
    Functional,
    /// couples several blocks of a guessing program
    Coupling,
}

impl fmt::Display for EqualityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EqualityKind::Normalization => "norm",
            EqualityKind::Sequential => "seq",
            EqualityKind::Commuting => "comm",
            EqualityKind::Pin => "pin",
            EqualityKind::Functional => "func",
            EqualityKind::Coupling => "couple",
        })
    }
}

/// `Σ coef · key = rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearEquality {
    pub kind: EqualityKind,
    pub terms: Vec<Term>,
    pub rhs: f64,
}

impl LinearEquality {
    /// Merge repeated keys, drop zero terms, sort, and scale so the leading
    /// coefficient is `+1`. Returns `None` for `0 = 0`.
    pub fn canonical(mut self) -> Option<Self> {
        self.terms.sort_by_key(|t| (t.block, t.key));
        let mut merged: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms {
            match merged.last_mut() {
                Some(l) if (l.block, l.key) == (t.block, t.key) => l.coef += t.coef,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.coef.abs() > 1e-14);
        if merged.is_empty() {
            if self.rhs.abs() <= 1e-14 {
                return None;
            }
            return Some(LinearEquality { kind: self.kind, terms: merged, rhs: self.rhs });
        }
        let lead = merged[0].coef;
        for t in &mut merged {
            t.coef /= lead;
        }
        Some(LinearEquality { kind: self.kind, terms: merged, rhs: self.rhs / lead })
    }

    fn fingerprint(&self) -> (Vec<(usize, KeyId, u64)>, u64) {
        (
            self.terms.iter().map(|t| (t.block, t.key, (t.coef + 0.0).to_bits())).collect(),
            (self.rhs + 0.0).to_bits(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelaxationFlags {
    pub sequential_noback: bool,
    pub local_commuting: bool,
    pub normalization: bool,
    #[serde(default)]
    pub basis: BasisMode,
}

impl Default for RelaxationFlags {
    fn default() -> Self {
        Self { sequential_noback: true, local_commuting: false, normalization: true, basis: BasisMode::Full }
    }
}

impl RelaxationFlags {
    pub fn plain() -> Self {
        Self { sequential_noback: false, ..Self::default() }
    }

    pub fn sequential() -> Self {
        Self::default()
    }

    pub fn local() -> Self {
        Self { local_commuting: true, ..Self::default() }
    }
}

impl fmt::Display for RelaxationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.normalization {
            parts.push("normalization");
        }
        if self.sequential_noback {
            parts.push("sequential");
        }
        if self.local_commuting {
            parts.push("commuting");
        }
        if self.basis == BasisMode::CollinsGisin {
            parts.push("collins-gisin");
        }
        if parts.is_empty() {
            parts.push("none");
        }
        f.write_str(&parts.join("+"))
    }
}

#[derive(Clone, Debug)]
pub struct MomentProblem {
    pub scenario: ScenarioSpec,
    pub alphabet: Alphabet,
    pub level: LevelSpec,
    pub flags: RelaxationFlags,
    pub blocks: Vec<MomentMatrix>,
    pub equalities: Vec<LinearEquality>,
    pub objective: Vec<Term>,
    /// constant part of the objective, kept outside the SDP
    pub objective_offset: f64,
    pub sense: Sense,
    /// `Some(v)` fixes `Γ(0,0) = v`; `None` leaves it free
    pub normalization: Vec<Option<f64>>,
}

impl MomentProblem {
    pub fn render_key(&self, block: usize, key: KeyId) -> String {
        self.alphabet.render(&self.blocks[block].keys[key as usize])
    }

    fn render_term(&self, t: &Term) -> String {
        let tag = if self.blocks.len() > 1 { format!("#{}:", t.block) } else { String::new() };
        format!("{:+} <{}{}>", t.coef, tag, self.render_key(t.block, t.key))
    }

    /// Text dump of the constraint list for diffing across versions.
    pub fn write_fingerprint(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "scenario {}", self.scenario)?;
        writeln!(w, "level {} flags {}", self.level, self.flags)?;
        for (b, m) in self.blocks.iter().enumerate() {
            let norm = match self.normalization[b] {
                Some(v) => format!("{v}"),
                None => "free".into(),
            };
            writeln!(w, "block {b} size {} keys {} norm {norm}", m.size(), m.num_keys())?;
        }
        writeln!(w, "equalities {}", self.equalities.len())?;
        for e in &self.equalities {
            let terms: Vec<String> = e.terms.iter().map(|t| self.render_term(t)).collect();
            writeln!(w, "{} {} = {}", e.kind, terms.join(" "), e.rhs)?;
        }
        let obj: Vec<String> = self.objective.iter().map(|t| self.render_term(t)).collect();
        writeln!(w, "objective {} {} offset {}", self.sense, obj.join(" "), self.objective_offset)?;
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        self.write_fingerprint(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }

    /// Short stable hash of [`Self::fingerprint`].
    pub fn fingerprint_hash(&self) -> String {
        // FNV-1a
        let mut h: u64 = 0xcbf29ce484222325;
        for byte in self.fingerprint().bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    fn push_unique(&mut self, eqs: impl IntoIterator<Item = LinearEquality>) {
        let mut seen: HashSet<_> = self.equalities.iter().map(LinearEquality::fingerprint).collect();
        for e in eqs.into_iter().filter_map(LinearEquality::canonical) {
            if seen.insert(e.fingerprint()) {
                self.equalities.push(e);
            }
        }
    }

    /// Expansion of a symbol over the generating alphabet: dropped
    /// Collins–Gisin outcomes become `𝟙 − Σ others`.
    fn expand_symbol(&self, party: Party, inputs: &[usize], outputs: &[usize]) -> Vec<(f64, Option<SymId>)> {
        let ids = self.alphabet.ids_for(party, inputs);
        let id = ids
            .iter()
            .copied()
            .find(|&i| self.alphabet.symbol(i).outputs == outputs)
            .expect("validated event");
        let single = self.scenario.party(party).len() == 1;
        if self.flags.basis == BasisMode::CollinsGisin && single && Some(&id) == ids.last() {
            let mut v = vec![(1.0, None)];
            v.extend(ids[..ids.len() - 1].iter().map(|&i| (-1.0, Some(i))));
            v
        } else {
            vec![(1.0, Some(id))]
        }
    }

    /// Terms for `⟨A_a^x B_b^y⟩` in `block`.
    pub fn event_terms(&self, block: usize, e: &Event) -> Result<Vec<Term>> {
        let ea = self.expand_symbol(Party::A, &e.x, &e.a);
        let eb = self.expand_symbol(Party::B, &e.y, &e.b);
        let mut out = Vec::new();
        for &(ca, a) in &ea {
            for &(cb, b) in &eb {
                let w: IdWord = a.into_iter().chain(b).collect();
                if let Some(t) = self.word_term(block, &w, ca * cb)? {
                    out.push(t);
                }
            }
        }
        Ok(out)
    }

    fn word_term(&self, block: usize, w: &[SymId], coef: f64) -> Result<Option<Term>> {
        let Some(r) = self.alphabet.reduce(w) else {
            return Ok(None);
        };
        let k = self.alphabet.key(r);
        match self.blocks[block].key_id(&k) {
            Some(key) => Ok(Some(Term { block, key, coef })),
            None => Err(Error::UnresolvableKey(format!(
                "moment <{}> is not an entry of block {block}",
                self.alphabet.render(&k)
            ))),
        }
    }

    fn functional_terms(&self, block: usize, f: &BellFunctional) -> Result<Vec<Term>> {
        if f.scenario != self.scenario {
            return Err(Error::ScenarioMismatch(format!(
                "functional is for {}, problem for {}",
                f.scenario, self.scenario
            )));
        }
        let layout = self.scenario.layout();
        let mut out = Vec::new();
        for (e, &c) in &f.coefficients {
            if layout.locate(e).is_none() {
                return Err(Error::InvalidIndex(format!("event `{e}` is not valid for the scenario")));
            }
            out.extend(self.event_terms(block, e)?.into_iter().map(|t| Term { coef: t.coef * c, ..t }));
        }
        Ok(out)
    }

    /// Adds `f(P) = value` as a moment-level equality on block 0.
    pub fn add_functional_equality(&mut self, f: &BellFunctional, value: f64) -> Result<()> {
        let terms = self.functional_terms(0, f)?;
        self.push_unique([LinearEquality { kind: EqualityKind::Functional, terms, rhs: value - f.offset }]);
        Ok(())
    }
}

/// Level set and single block for a scenario.
fn build_block(s: &ScenarioSpec, alphabet: &Alphabet, level: &LevelSpec, basis: BasisMode) -> Result<MomentMatrix> {
    let monomials = level_set_ids(s, alphabet, level, basis)?;
    Ok(MomentMatrix::new(alphabet, monomials))
}

/// Resolve `u† · middle · v` to a block key; `Ok(None)` is a zero product,
/// `Err(())` an entry outside the block.
fn resolve(
    alphabet: &Alphabet,
    m: &MomentMatrix,
    u: &[SymId],
    middle: &[SymId],
    v: &[SymId],
) -> std::result::Result<Option<KeyId>, ()> {
    match alphabet.sandwich(u, middle, v) {
        None => Ok(None),
        Some(w) => m.key_id(&alphabet.key(w)).map(Some).ok_or(()),
    }
}

/// Collects `Σ coef · key(u† middle v)` terms; `None` if any key is missing.
fn collect_terms(
    alphabet: &Alphabet,
    m: &MomentMatrix,
    u: &[SymId],
    v: &[SymId],
    parts: &[(f64, &[SymId])],
) -> Option<Vec<Term>> {
    let mut terms = Vec::with_capacity(parts.len());
    for &(c, mid) in parts {
        if let Some(key) = resolve(alphabet, m, u, mid, v).ok()? {
            terms.push(Term { block: 0, key, coef: c });
        }
    }
    Some(terms)
}

/// Party-level operator groups used by the generators.
struct Groups {
    /// per party and full input tuple: ids of every outcome
    by_input: Vec<Vec<SymId>>,
    /// (first group, second group) of the no-signalling differences
    noback: Vec<(Vec<SymId>, Vec<SymId>)>,
    /// same-party symbol pairs `(O, O′)` with `O < O′`
    commuting: Vec<(SymId, SymId)>,
}

fn groups(s: &ScenarioSpec, alphabet: &Alphabet, flags: &RelaxationFlags) -> Groups {
    let mut by_input = Vec::new();
    let mut noback = Vec::new();
    let mut commuting = Vec::new();
    for p in [Party::A, Party::B] {
        let spec = s.party(p);
        let inputs = spec.input_tuples();
        if flags.normalization {
            for x in &inputs {
                by_input.push(alphabet.ids_for(p, x));
            }
        }
        if flags.sequential_noback {
            let n = spec.len();
            for k in 1..n {
                // prefixes (inputs, outputs) of length k
                let mut prefixes: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
                for x in &inputs {
                    for a in spec.output_tuples(x) {
                        let pre = (x[..k].to_vec(), a[..k].to_vec());
                        if !prefixes.contains(&pre) {
                            prefixes.push(pre);
                        }
                    }
                }
                for (px, pa) in prefixes {
                    let suffixes: Vec<&Vec<usize>> = inputs.iter().filter(|x| x[..k] == px[..]).collect();
                    let group = |x: &[usize]| -> Vec<SymId> {
                        alphabet
                            .ids_for(p, x)
                            .into_iter()
                            .filter(|&i| alphabet.symbol(i).outputs[..k] == pa[..])
                            .collect()
                    };
                    for i in 0..suffixes.len() {
                        for j in i + 1..suffixes.len() {
                            noback.push((group(suffixes[i]), group(suffixes[j])));
                        }
                    }
                }
            }
        }
        if flags.local_commuting {
            let ids: Vec<SymId> = (0..alphabet.len() as SymId).filter(|&i| alphabet.party(i) == p).collect();
            for (i, &o) in ids.iter().enumerate() {
                for &o2 in &ids[i + 1..] {
                    commuting.push((o, o2));
                }
            }
        }
    }
    Groups { by_input, noback, commuting }
}

/// All generator equalities of a single block, in deterministic order.
fn block_equalities(alphabet: &Alphabet, m: &MomentMatrix, g: &Groups) -> Vec<LinearEquality> {
    let n = m.size();
    let rows: Vec<Vec<LinearEquality>> = par::map_range(n, |i| {
        let u = &m.monomials[i];
        let mut out = Vec::new();
        for v in &m.monomials[i..] {
            for ids in &g.by_input {
                let mut parts: Vec<(f64, &[SymId])> = ids.iter().map(|id| (1.0, std::slice::from_ref(id))).collect();
                parts.push((-1.0, &[]));
                if let Some(terms) = collect_terms(alphabet, m, u, v, &parts) {
                    out.push(LinearEquality { kind: EqualityKind::Normalization, terms, rhs: 0.0 });
                }
            }
            for (g1, g2) in &g.noback {
                let parts: Vec<(f64, &[SymId])> = g1
                    .iter()
                    .map(|id| (1.0, std::slice::from_ref(id)))
                    .chain(g2.iter().map(|id| (-1.0, std::slice::from_ref(id))))
                    .collect();
                if let Some(terms) = collect_terms(alphabet, m, u, v, &parts) {
                    out.push(LinearEquality { kind: EqualityKind::Sequential, terms, rhs: 0.0 });
                }
            }
            for &(o, o2) in &g.commuting {
                let parts: [(f64, &[SymId]); 2] = [(1.0, &[o, o2]), (-1.0, &[o2, o])];
                if let Some(terms) = collect_terms(alphabet, m, u, v, &parts) {
                    out.push(LinearEquality { kind: EqualityKind::Commuting, terms, rhs: 0.0 });
                }
            }
        }
        out
    });
    let mut seen = HashSet::new();
    rows.into_iter()
        .flatten()
        .filter_map(LinearEquality::canonical)
        .filter(|e| seen.insert(e.fingerprint()))
        .collect()
}

/// Single-block relaxation with `Γ(0,0) = 1`, no pins and no objective.
pub fn build_moment_problem(s: &ScenarioSpec, level: &LevelSpec, flags: RelaxationFlags) -> Result<MomentProblem> {
    let alphabet = Alphabet::new(s);
    let block = build_block(s, &alphabet, level, flags.basis)?;
    let g = groups(s, &alphabet, &flags);
    let equalities = block_equalities(&alphabet, &block, &g);
    Ok(MomentProblem {
        scenario: s.clone(),
        alphabet,
        level: level.clone(),
        flags,
        blocks: vec![block],
        equalities,
        objective: Vec::new(),
        objective_offset: 0.0,
        sense: Sense::Maximize,
        normalization: vec![Some(1.0)],
    })
}

/// Adds `⟨A_a^x B_b^y⟩ = P(a,b|x,y)` for every event.
pub fn pin_behavior(mut p: MomentProblem, b: &Behavior) -> Result<MomentProblem> {
    if b.scenario != p.scenario {
        return Err(Error::ScenarioMismatch(format!("behavior is for {}, problem for {}", b.scenario, p.scenario)));
    }
    let layout = p.scenario.layout();
    let mut eqs = Vec::with_capacity(layout.len());
    for (e, &v) in layout.events().iter().zip(&b.table) {
        eqs.push(LinearEquality { kind: EqualityKind::Pin, terms: p.event_terms(0, e)?, rhs: v });
    }
    p.push_unique(eqs);
    Ok(p)
}

/// Maximize `f`; the functional's constant is kept outside the SDP.
pub fn set_objective(mut p: MomentProblem, f: &BellFunctional) -> Result<MomentProblem> {
    p.objective = p.functional_terms(0, f)?;
    p.objective_offset = f.offset;
    p.sense = Sense::Maximize;
    Ok(p)
}

/// Guessing program for Bob's outputs at inputs `y_star`: one subnormalized
/// block per guess, blocks summing to the observed behavior.
pub fn build_guessing_program(
    s: &ScenarioSpec,
    level: &LevelSpec,
    b_obs: &Behavior,
    y_star: &[usize],
) -> Result<MomentProblem> {
    build_guessing_program_with(s, level, b_obs, y_star, RelaxationFlags::sequential())
}

pub fn build_guessing_program_with(
    s: &ScenarioSpec,
    level: &LevelSpec,
    b_obs: &Behavior,
    y_star: &[usize],
    flags: RelaxationFlags,
) -> Result<MomentProblem> {
    if b_obs.scenario != *s {
        return Err(Error::ScenarioMismatch(format!("behavior is for {}, problem for {}", b_obs.scenario, s)));
    }
    if !s.party(Party::B).is_valid_input(y_star) {
        return Err(Error::InvalidIndex(format!("{y_star:?} is not an input of party B")));
    }
    let base = build_moment_problem(s, level, flags)?;
    let guesses = s.party(Party::B).output_tuples(y_star);
    let nb = guesses.len();
    let mut blocks = Vec::with_capacity(nb);
    let mut equalities = Vec::with_capacity(base.equalities.len() * nb + 64);
    for e in 0..nb {
        blocks.push(base.blocks[0].clone());
        equalities.extend(base.equalities.iter().map(|q| LinearEquality {
            terms: q.terms.iter().map(|t| Term { block: e, ..*t }).collect(),
            ..q.clone()
        }));
    }
    let mut p = MomentProblem {
        blocks,
        equalities,
        normalization: vec![None; nb],
        ..base
    };
    let layout = s.layout();
    let mut coupling = Vec::with_capacity(layout.len() + 1);
    for (ev, &v) in layout.events().iter().zip(&b_obs.table) {
        let mut terms = Vec::new();
        for e in 0..nb {
            terms.extend(p.event_terms(e, ev)?);
        }
        coupling.push(LinearEquality { kind: EqualityKind::Coupling, terms, rhs: v });
    }
    coupling.push(LinearEquality {
        kind: EqualityKind::Coupling,
        terms: (0..nb).map(|e| Term { block: e, key: p.blocks[e].identity_key(), coef: 1.0 }).collect(),
        rhs: 1.0,
    });
    p.push_unique(coupling);
    let mut objective = Vec::with_capacity(nb);
    for (e, b) in guesses.iter().enumerate() {
        let id = p
            .alphabet
            .id(&crate::ncalg::OpSymbol::new(Party::B, y_star, b))
            .expect("valid event");
        objective.extend(p.word_term(e, &[id], 1.0)?);
    }
    p.objective = objective;
    p.objective_offset = 0.0;
    p.sense = Sense::Maximize;
    Ok(p)
}

/// Where a moment ended up after compilation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KeyStatus {
    /// an SDP variable `y_k`
    Free(usize),
    /// affine in the free variables: `constant + Σ c·y`
    Eliminated { constant: f64, terms: Vec<(usize, f64)> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceEntry {
    pub block: usize,
    pub key: KeyId,
    pub moment: String,
    pub status: KeyStatus,
}

/// Compiled SDP plus the key → variable table.
#[derive(Clone, Debug)]
pub struct CompiledProblem {
    pub sdp: SdpStandardForm,
    pub trace: Vec<TraceEntry>,
    /// number of moment blocks; any further blocks certify inconsistency
    pub moment_blocks: usize,
}

impl CompiledProblem {
    pub fn write_trace(&self, mut w: impl Write) -> Result<()> {
        for t in &self.trace {
            match &t.status {
                KeyStatus::Free(v) => writeln!(w, "{} {} y{}", t.block, t.moment, v + 1)?,
                KeyStatus::Eliminated { constant, terms } => {
                    let mut s = format!("{constant}");
                    for (v, c) in terms {
                        s.push_str(&format!(" {c:+}*y{}", v + 1));
                    }
                    writeln!(w, "{} {} = {s}", t.block, t.moment)?;
                }
            }
        }
        Ok(())
    }
}

/// Sparse affine form over global moment indices.
#[derive(Clone, Debug, Default)]
struct Affine {
    terms: Vec<(u32, f64)>,
    constant: f64,
}

/// Incremental Gaussian elimination keeping every eliminated moment
/// expressed in the current free moments only.
struct Eliminator {
    subst: Vec<Option<Affine>>,
    users: Vec<Vec<u32>>,
    inconsistent: Vec<f64>,
}

const DROP_TOL: f64 = 1e-12;

impl Eliminator {
    fn new(n: usize) -> Self {
        Self { subst: vec![None; n], users: vec![Vec::new(); n], inconsistent: Vec::new() }
    }

    fn substitute(&self, terms: &[(u32, f64)], acc: &mut HashMap<u32, f64>) -> f64 {
        let mut constant = 0.0;
        for &(v, c) in terms {
            match &self.subst[v as usize] {
                Some(a) => {
                    constant += c * a.constant;
                    for &(w, d) in &a.terms {
                        *acc.entry(w).or_default() += c * d;
                    }
                }
                None => *acc.entry(v).or_default() += c,
            }
        }
        constant
    }

    fn add(&mut self, terms: &[(u32, f64)], rhs: f64) {
        let mut acc = HashMap::new();
        let constant = self.substitute(terms, &mut acc);
        let scale = terms.iter().map(|t| t.1.abs()).fold(1.0, f64::max);
        let mut row: Vec<(u32, f64)> = acc.into_iter().filter(|t| t.1.abs() > DROP_TOL * scale).collect();
        let r = rhs - constant;
        if row.is_empty() {
            if r.abs() > 1e-9 {
                self.inconsistent.push(r.abs());
            }
            return;
        }
        row.sort_by_key(|t| t.0);
        let big = row.iter().map(|t| t.1.abs()).fold(0.0, f64::max);
        let &(p, cp) = row.iter().rev().find(|t| t.1.abs() >= 0.1 * big).expect("non-empty row");
        // x_p = (r − Σ_{j≠p} c_j x_j) / c_p
        let expr = Affine {
            terms: row.iter().filter(|t| t.0 != p).map(|&(v, c)| (v, -c / cp)).collect(),
            constant: r / cp,
        };
        let dependents = std::mem::take(&mut self.users[p as usize]);
        for e in dependents {
            let Some(a) = self.subst[e as usize].as_mut() else { continue };
            let Some(pos) = a.terms.iter().position(|t| t.0 == p) else { continue };
            let c = a.terms.swap_remove(pos).1;
            a.constant += c * expr.constant;
            let mut merged: HashMap<u32, f64> = a.terms.iter().copied().collect();
            for &(w, d) in &expr.terms {
                *merged.entry(w).or_default() += c * d;
            }
            let mut t: Vec<(u32, f64)> = merged.into_iter().filter(|t| t.1.abs() > DROP_TOL).collect();
            t.sort_by_key(|t| t.0);
            for &(w, _) in &t {
                self.users[w as usize].push(e);
            }
            a.terms = t;
        }
        for &(w, _) in &expr.terms {
            self.users[w as usize].push(p);
        }
        self.subst[p as usize] = Some(expr);
    }
}

/// Compile to a standard-form SDP over the free moments (dual side):
/// `Γ(y) = Σ y_k A_k − C ⪰ 0` per block, objective folded into `b`.
/// Keys that vanish on every feasible point because a zero diagonal entry
/// of a PSD block zeroes its whole row. Diagonal entries are nonnegative,
/// so an equality `Σ c_i Γ_ii = 0` with same-sign `c_i` zeroes each of them.
fn forced_zeros(p: &MomentProblem, offsets: &[usize]) -> Vec<u32> {
    const ZERO_TOL: f64 = 1e-14;
    let total: usize = p.blocks.iter().map(MomentMatrix::num_keys).sum();
    // rows whose diagonal holds each key
    let mut diag_rows: Vec<Vec<(usize, usize)>> = vec![Vec::new(); total];
    for (b, m) in p.blocks.iter().enumerate() {
        for i in 0..m.size() {
            if let Some(k) = m.entry(i, i) {
                diag_rows[offsets[b] + k as usize].push((b, i));
            }
        }
    }
    let mut zero = vec![false; total];
    let mut row_done: Vec<Vec<bool>> = p.blocks.iter().map(|m| vec![false; m.size()]).collect();
    let mut queue: Vec<usize> = Vec::new();
    let mut changed = true;
    while changed {
        changed = false;
        for e in &p.equalities {
            if e.rhs.abs() > ZERO_TOL {
                continue;
            }
            let live: Vec<&Term> = e.terms.iter().filter(|t| !zero[offsets[t.block] + t.key as usize]).collect();
            if live.is_empty() {
                continue;
            }
            let same_sign = live.iter().all(|t| t.coef > 0.0) || live.iter().all(|t| t.coef < 0.0);
            if same_sign && live.iter().all(|t| !diag_rows[offsets[t.block] + t.key as usize].is_empty()) {
                for t in live {
                    let g = offsets[t.block] + t.key as usize;
                    zero[g] = true;
                    queue.push(g);
                }
                changed = true;
            }
        }
        while let Some(g) = queue.pop() {
            for &(b, i) in &diag_rows[g] {
                if row_done[b][i] {
                    continue;
                }
                row_done[b][i] = true;
                let m = &p.blocks[b];
                for j in 0..m.size() {
                    if let Some(k) = m.entry(i, j) {
                        let h = offsets[b] + k as usize;
                        if !zero[h] {
                            zero[h] = true;
                            queue.push(h);
                            changed = true;
                        }
                    }
                }
            }
        }
    }
    (0..total).filter(|&g| zero[g]).map(|g| g as u32).collect()
}

pub fn compile_to_sdp(p: &MomentProblem) -> Result<CompiledProblem> {
    let offsets: Vec<usize> = p
        .blocks
        .iter()
        .scan(0usize, |acc, b| {
            let o = *acc;
            *acc += b.num_keys();
            Some(o)
        })
        .collect();
    let total: usize = p.blocks.iter().map(MomentMatrix::num_keys).sum();
    let gid = |t: &Term| (offsets[t.block] + t.key as usize) as u32;

    // direct pins that disagree are a modelling error rather than infeasibility
    let mut pinned: HashMap<u32, (f64, usize)> = HashMap::new();
    for (i, e) in p.equalities.iter().enumerate() {
        if let [t] = e.terms.as_slice() {
            let v = e.rhs / t.coef;
            if let Some(&(w, _)) = pinned.get(&gid(t)) {
                if (w - v).abs() > 1e-12 {
                    return Err(Error::ContradictoryPins {
                        key: p.render_key(t.block, t.key),
                        first: w,
                        second: v,
                    });
                }
            } else {
                pinned.insert(gid(t), (v, i));
            }
        }
    }

    let mut elim = Eliminator::new(total);
    for g in forced_zeros(p, &offsets) {
        elim.add(&[(g, 1.0)], 0.0);
    }
    for (b, norm) in p.normalization.iter().enumerate() {
        if let Some(v) = norm {
            elim.add(&[(offsets[b] as u32 + p.blocks[b].identity_key(), 1.0)], *v);
        }
    }
    // short equalities first keeps fill-in low
    let mut order: Vec<usize> = (0..p.equalities.len()).collect();
    order.sort_by_key(|&i| p.equalities[i].terms.len());
    for i in order {
        let e = &p.equalities[i];
        let terms: Vec<(u32, f64)> = e.terms.iter().map(|t| (gid(t), t.coef)).collect();
        elim.add(&terms, e.rhs);
    }

    let mut var_of = vec![usize::MAX; total];
    let mut nvars = 0;
    for g in 0..total {
        if elim.subst[g].is_none() {
            var_of[g] = nvars;
            nvars += 1;
        }
    }

    let mut sizes: Vec<usize> = p.blocks.iter().map(MomentMatrix::size).collect();
    let mut c = SparseSym::new();
    let mut a = vec![SparseSym::new(); nvars];
    let mut trace = Vec::with_capacity(total);
    for (b, m) in p.blocks.iter().enumerate() {
        for k in 0..m.num_keys() as KeyId {
            let g = offsets[b] + k as usize;
            let status = match &elim.subst[g] {
                None => {
                    for &(i, j) in m.positions(k) {
                        a[var_of[g]].push(b, i as usize, j as usize, 1.0);
                    }
                    KeyStatus::Free(var_of[g])
                }
                Some(expr) => {
                    for &(i, j) in m.positions(k) {
                        if expr.constant != 0.0 {
                            c.push(b, i as usize, j as usize, -expr.constant);
                        }
                        for &(w, d) in &expr.terms {
                            a[var_of[w as usize]].push(b, i as usize, j as usize, d);
                        }
                    }
                    KeyStatus::Eliminated {
                        constant: expr.constant,
                        terms: expr.terms.iter().map(|&(w, d)| (var_of[w as usize], d)).collect(),
                    }
                }
            };
            trace.push(TraceEntry { block: b, key: k, moment: p.render_key(b, k), status });
        }
    }
    // an inconsistent system becomes a 1×1 block fixed at −|δ|
    if let Some(delta) = elim.inconsistent.iter().copied().reduce(f64::max) {
        c.push(sizes.len(), 0, 0, delta);
        sizes.push(1);
    }

    let mut obj = HashMap::new();
    let objective_terms: Vec<(u32, f64)> = p.objective.iter().map(|t| (gid(t), t.coef)).collect();
    let constant = elim.substitute(&objective_terms, &mut obj);
    let sign = match p.sense {
        Sense::Maximize => -1.0,
        Sense::Minimize => 1.0,
    };
    let mut rhs = vec![0.0; nvars];
    for (g, v) in obj {
        rhs[var_of[g as usize]] = sign * v;
    }
    let sdp = SdpStandardForm {
        block_sizes: sizes,
        objective: c,
        constraints: a,
        rhs,
        side: Side::Dual,
        sense: p.sense,
        offset: p.objective_offset + constant,
    };
    Ok(CompiledProblem { sdp, trace, moment_blocks: p.blocks.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ncalg::OpSymbol;

    #[test]
    fn chsh_has_no_sequential_constraints() {
        let s = ScenarioSpec::chsh();
        let seq = build_moment_problem(&s, &LevelSpec::Degree(1), RelaxationFlags::sequential()).unwrap();
        let plain = build_moment_problem(&s, &LevelSpec::Degree(1), RelaxationFlags::plain()).unwrap();
        assert!(seq.equalities.iter().all(|e| e.kind != EqualityKind::Sequential));
        assert_eq!(seq.fingerprint().lines().skip(2).collect::<Vec<_>>(), plain.fingerprint().lines().skip(2).collect::<Vec<_>>());
    }

    #[test]
    fn gallego_noback_constraint_on_identity_row() {
        let s = ScenarioSpec::gallego();
        let p = build_moment_problem(&s, &LevelSpec::OnePlusAb, RelaxationFlags::sequential()).unwrap();
        let m = &p.blocks[0];
        let al = &p.alphabet;
        for y1 in 0..2 {
            for b1 in 0..2 {
                let key = |y2: usize, b2: usize| {
                    m.key_id(&[al.id(&OpSymbol::new(Party::B, &[y1, y2], &[b1, b2])).unwrap()]).unwrap()
                };
                let mut want = LinearEquality {
                    kind: EqualityKind::Sequential,
                    terms: vec![
                        Term { block: 0, key: key(0, 0), coef: 1.0 },
                        Term { block: 0, key: key(0, 1), coef: 1.0 },
                        Term { block: 0, key: key(1, 0), coef: -1.0 },
                        Term { block: 0, key: key(1, 1), coef: -1.0 },
                    ],
                    rhs: 0.0,
                }
                .canonical()
                .unwrap();
                want.kind = EqualityKind::Sequential;
                assert!(p.equalities.contains(&want), "missing no-signalling constraint for y1={y1} b1={b1}");
            }
        }
    }

    #[test]
    fn contradictory_pins_are_structural() {
        let s = ScenarioSpec::chsh();
        let mut p = build_moment_problem(&s, &LevelSpec::Degree(1), RelaxationFlags::plain()).unwrap();
        p.equalities.push(LinearEquality { kind: EqualityKind::Pin, terms: vec![Term { block: 0, key: 1, coef: 1.0 }], rhs: 0.25 });
        p.equalities.push(LinearEquality { kind: EqualityKind::Pin, terms: vec![Term { block: 0, key: 1, coef: 2.0 }], rhs: 1.0 });
        assert!(matches!(compile_to_sdp(&p), Err(Error::ContradictoryPins { .. })));
    }

    #[test]
    fn fully_pinned_problem_has_no_free_variables() {
        let s = ScenarioSpec::chsh();
        let p = build_moment_problem(&s, &LevelSpec::Degree(1), RelaxationFlags::plain()).unwrap();
        let p = pin_behavior(p, &Behavior::uniform(s.clone())).unwrap();
        let c = compile_to_sdp(&p).unwrap();
        // the A_x B_y cross moments are pinned; the A A′ and B B′ moments stay free
        assert!(c.trace.iter().filter(|t| t.moment.contains('A') && t.moment.contains('B')).all(|t| matches!(t.status, KeyStatus::Eliminated { .. })));
        let explicit = LevelSpec::Explicit(vec![]);
        let q = build_moment_problem(&s, &explicit, RelaxationFlags::plain()).unwrap();
        let c = compile_to_sdp(&q).unwrap();
        assert_eq!(c.sdp.num_constraints(), 0);
        assert_eq!(c.sdp.block_sizes, vec![1]);
    }

    #[test]
    fn canonical_equality_normalizes_sign() {
        let e = LinearEquality {
            kind: EqualityKind::Normalization,
            terms: vec![Term { block: 0, key: 3, coef: -2.0 }, Term { block: 0, key: 1, coef: 4.0 }, Term { block: 0, key: 3, coef: 0.0 }],
            rhs: 2.0,
        };
        let c = e.canonical().unwrap();
        assert_eq!(c.terms[0].key, 1);
        assert_eq!(c.terms[0].coef, 1.0);
        assert_eq!(c.terms[1].coef, -0.5);
        assert_eq!(c.rhs, 0.5);
    }
}
