//! Word algebra over full-sequence measurement operators.
//!
//! Every symbol `A[x⃗|a⃗]` is a projector. Words are reduced by
//! (R1) moving all `A` letters in front of all `B` letters,
//! (R2) deleting one of two equal adjacent letters and
//! (R3) mapping the word to zero when two adjacent same-party letters agree
//! on an input prefix but disagree on an output within that prefix.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Party, ScenarioSpec};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpSymbol {
    pub party: Party,
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
}

impl OpSymbol {
    pub fn new(party: Party, inputs: &[usize], outputs: &[usize]) -> Self {
        Self { party, inputs: inputs.to_vec(), outputs: outputs.to_vec() }
    }

    pub fn is_valid_for(&self, s: &ScenarioSpec) -> bool {
        s.party(self.party).is_valid_event(&self.inputs, &self.outputs)
    }
}

impl fmt::Display for OpSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |t: &[usize]| t.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        write!(f, "{}[{}|{}]", self.party, join(&self.inputs), join(&self.outputs))
    }
}

/// How two adjacent letters of the same party multiply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    /// identical projectors: `PP = P`
    Same,
    /// orthogonal: `PQ = 0`
    Zero,
    /// no rule applies
    Free,
}

/// Relation between two same-party symbols given their input and output tuples.
pub fn relation(inputs: &[usize], outputs: &[usize], inputs2: &[usize], outputs2: &[usize]) -> Relation {
    let common = inputs.iter().zip(inputs2).take_while(|(a, b)| a == b).count();
    if common == inputs.len() && common == inputs2.len() && outputs == outputs2 {
        return Relation::Same;
    }
    if common >= 1 && outputs[..common] != outputs2[..common] {
        return Relation::Zero;
    }
    Relation::Free
}

/// Shared reduction kernel: stable party sort, then a single stack pass per
/// party. The stack pass reaches the fixpoint because deletions only ever
/// remove the incoming letter.
fn reduce_letters<T: Clone>(
    letters: &[T],
    party: impl Fn(&T) -> Party,
    rel: impl Fn(&T, &T) -> Relation,
) -> Option<Vec<T>> {
    let mut out: Vec<T> = Vec::with_capacity(letters.len());
    for p in [Party::A, Party::B] {
        let start = out.len();
        for l in letters.iter().filter(|l| party(l) == p) {
            if out.len() > start {
                match rel(out.last().expect("non-empty"), l) {
                    Relation::Same => continue,
                    Relation::Zero => return None,
                    Relation::Free => {}
                }
            }
            out.push(l.clone());
        }
    }
    Some(out)
}

/// A product of symbols; the empty word is the identity.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpWord {
    pub letters: Vec<OpSymbol>,
}

impl OpWord {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(letters: Vec<OpSymbol>) -> Self {
        Self { letters }
    }

    pub fn is_identity(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn concat(&self, other: &OpWord) -> OpWord {
        let mut letters = self.letters.clone();
        letters.extend_from_slice(&other.letters);
        OpWord { letters }
    }
}

impl fmt::Display for OpWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.is_empty() {
            return f.write_str("1");
        }
        for (i, l) in self.letters.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CanonicalForm {
    Zero,
    Word(OpWord),
}

impl CanonicalForm {
    pub fn word(&self) -> Option<&OpWord> {
        match self {
            CanonicalForm::Zero => None,
            CanonicalForm::Word(w) => Some(w),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, CanonicalForm::Zero)
    }
}

impl fmt::Display for CanonicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CanonicalForm::Zero => f.write_str("0"),
            CanonicalForm::Word(w) => w.fmt(f),
        }
    }
}

pub fn reduce(w: &OpWord) -> CanonicalForm {
    let rel = |s: &OpSymbol, t: &OpSymbol| relation(&s.inputs, &s.outputs, &t.inputs, &t.outputs);
    match reduce_letters(&w.letters, |s| s.party, rel) {
        Some(letters) => CanonicalForm::Word(OpWord { letters }),
        None => CanonicalForm::Zero,
    }
}

/// Symbols are self-adjoint, so the adjoint reverses the word.
pub fn adjoint(w: &OpWord) -> OpWord {
    OpWord { letters: w.letters.iter().rev().cloned().collect() }
}

/// Identifies a word with its adjoint (real symmetric moment matrices).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MomentKey(pub OpWord);

impl fmt::Display for MomentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Key of a word, or `None` when the word reduces to zero.
pub fn moment_key(w: &OpWord) -> Option<MomentKey> {
    let CanonicalForm::Word(c) = reduce(w) else {
        return None;
    };
    let CanonicalForm::Word(r) = reduce(&adjoint(&c)) else {
        unreachable!("the adjoint of a nonzero canonical word is nonzero");
    };
    Some(MomentKey(if shortlex(&r.letters, &c.letters).is_lt() { r } else { c }))
}

fn shortlex<T: Ord>(a: &[T], b: &[T]) -> std::cmp::Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

/// Interned symbol index inside an [`Alphabet`].
pub type SymId = u16;

/// Word over interned symbols.
pub type IdWord = Vec<SymId>;

/// Interned symbol table for a scenario with a precomputed relation table.
/// Ids follow the symbol order, so comparing id words compares symbol words.
#[derive(Clone, Debug)]
pub struct Alphabet {
    symbols: Vec<OpSymbol>,
    parties: Vec<Party>,
    relations: Vec<Relation>,
}

impl Alphabet {
    pub fn new(s: &ScenarioSpec) -> Self {
        let mut symbols = Vec::new();
        for p in [Party::A, Party::B] {
            for (x, a) in s.party(p).events() {
                symbols.push(OpSymbol { party: p, inputs: x, outputs: a });
            }
        }
        symbols.sort();
        assert!(symbols.len() < SymId::MAX as usize, "alphabet too large");
        let n = symbols.len();
        let mut relations = vec![Relation::Free; n * n];
        for i in 0..n {
            for j in 0..n {
                if symbols[i].party == symbols[j].party {
                    relations[i * n + j] =
                        relation(&symbols[i].inputs, &symbols[i].outputs, &symbols[j].inputs, &symbols[j].outputs);
                }
            }
        }
        let parties = symbols.iter().map(|s| s.party).collect();
        Self { symbols, parties, relations }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, id: SymId) -> &OpSymbol {
        &self.symbols[id as usize]
    }

    pub fn symbols(&self) -> &[OpSymbol] {
        &self.symbols
    }

    pub fn party(&self, id: SymId) -> Party {
        self.parties[id as usize]
    }

    pub fn id(&self, s: &OpSymbol) -> Option<SymId> {
        self.symbols.binary_search(s).ok().map(|i| i as SymId)
    }

    /// Ids of `party`'s symbols with the given inputs, ordered by outputs.
    pub fn ids_for(&self, party: Party, inputs: &[usize]) -> Vec<SymId> {
        (0..self.symbols.len())
            .filter(|&i| self.symbols[i].party == party && self.symbols[i].inputs == inputs)
            .map(|i| i as SymId)
            .collect()
    }

    pub fn relation(&self, a: SymId, b: SymId) -> Relation {
        self.relations[a as usize * self.symbols.len() + b as usize]
    }

    pub fn reduce(&self, w: &[SymId]) -> Option<IdWord> {
        reduce_letters(w, |&i| self.party(i), |&a, &b| self.relation(a, b))
    }

    /// Reduce `u† · v`.
    pub fn product(&self, u: &[SymId], v: &[SymId]) -> Option<IdWord> {
        let mut w: IdWord = Vec::with_capacity(u.len() + v.len());
        w.extend(u.iter().rev());
        w.extend_from_slice(v);
        self.reduce(&w)
    }

    /// Reduce `u† · middle · v`.
    pub fn sandwich(&self, u: &[SymId], middle: &[SymId], v: &[SymId]) -> Option<IdWord> {
        let mut w: IdWord = Vec::with_capacity(u.len() + middle.len() + v.len());
        w.extend(u.iter().rev());
        w.extend_from_slice(middle);
        w.extend_from_slice(v);
        self.reduce(&w)
    }

    /// Key of an already canonical id word: the shortlex-smaller of the word
    /// and its (party-sorted) reversal.
    pub fn key(&self, w: IdWord) -> IdWord {
        let split = w.iter().position(|&i| self.party(i) == Party::B).unwrap_or(w.len());
        let mut r: IdWord = Vec::with_capacity(w.len());
        r.extend(w[..split].iter().rev());
        r.extend(w[split..].iter().rev());
        if r < w {
            r
        } else {
            w
        }
    }

    pub fn to_word(&self, w: &[SymId]) -> OpWord {
        OpWord { letters: w.iter().map(|&i| self.symbol(i).clone()).collect() }
    }

    pub fn from_word(&self, w: &OpWord) -> Result<IdWord> {
        w.letters
            .iter()
            .map(|l| self.id(l).ok_or_else(|| Error::InvalidIndex(format!("symbol {l} is not in the scenario"))))
            .collect()
    }

    pub fn render(&self, w: &[SymId]) -> String {
        self.to_word(w).to_string()
    }
}

/// Which outcomes of single-step parties enter the generating set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisMode {
    /// every outcome of every input
    #[default]
    Full,
    /// single-step parties drop the last outcome of each input
    CollinsGisin,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LevelSpec {
    Degree(usize),
    OnePlusAb,
    Explicit(Vec<OpWord>),
}

impl FromStr for LevelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("1+AB") {
            return Ok(LevelSpec::OnePlusAb);
        }
        match t.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(LevelSpec::Degree(k)),
            _ => Err(Error::InvalidParameter(format!("invalid level `{s}` (expected a positive integer or `1+AB`)"))),
        }
    }
}

impl fmt::Display for LevelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelSpec::Degree(k) => write!(f, "{k}"),
            LevelSpec::OnePlusAb => f.write_str("1+AB"),
            LevelSpec::Explicit(ws) => write!(f, "explicit({})", ws.len()),
        }
    }
}

/// Symbols admitted to the degree-one generating set.
pub fn degree_one_ids(s: &ScenarioSpec, alphabet: &Alphabet, basis: BasisMode) -> Vec<SymId> {
    (0..alphabet.len() as SymId)
        .filter(|&id| {
            let sym = alphabet.symbol(id);
            let party = s.party(sym.party);
            match basis {
                BasisMode::Full => true,
                BasisMode::CollinsGisin if party.len() == 1 => {
                    sym.outputs[0] + 1 < party.steps[0].outputs_per_input[sym.inputs[0]]
                }
                BasisMode::CollinsGisin => true,
            }
        })
        .collect()
}

/// Generating set as interned words, identity first, then shortlex order.
pub fn level_set_ids(s: &ScenarioSpec, alphabet: &Alphabet, level: &LevelSpec, basis: BasisMode) -> Result<Vec<IdWord>> {
    let ones = degree_one_ids(s, alphabet, basis);
    let mut set: HashSet<IdWord> = HashSet::new();
    set.insert(Vec::new());
    for &id in &ones {
        set.insert(vec![id]);
    }
    match level {
        LevelSpec::Degree(k) => {
            if *k == 0 {
                return Err(Error::InvalidParameter("level must be at least 1".into()));
            }
            let mut frontier: Vec<IdWord> = set.iter().cloned().collect();
            for _ in 1..*k {
                let mut next = Vec::new();
                for w in &frontier {
                    for &id in &ones {
                        let mut p = w.clone();
                        p.push(id);
                        if let Some(r) = alphabet.reduce(&p) {
                            if set.insert(r.clone()) {
                                next.push(r);
                            }
                        }
                    }
                }
                frontier = next;
            }
        }
        LevelSpec::OnePlusAb => {
            for &a in ones.iter().filter(|&&i| alphabet.party(i) == Party::A) {
                for &b in ones.iter().filter(|&&i| alphabet.party(i) == Party::B) {
                    set.insert(vec![a, b]);
                }
            }
        }
        LevelSpec::Explicit(words) => {
            set.clear();
            set.insert(Vec::new());
            for w in words {
                if let Some(r) = alphabet.reduce(&alphabet.from_word(w)?) {
                    set.insert(r);
                }
            }
        }
    }
    let mut out: Vec<IdWord> = set.into_iter().collect();
    out.sort_by(|a, b| shortlex(a, b));
    Ok(out)
}

pub fn generate_level_set(s: &ScenarioSpec, level: &LevelSpec) -> Result<Vec<OpWord>> {
    generate_level_set_with(s, level, BasisMode::Full)
}

pub fn generate_level_set_with(s: &ScenarioSpec, level: &LevelSpec, basis: BasisMode) -> Result<Vec<OpWord>> {
    let alphabet = Alphabet::new(s);
    Ok(level_set_ids(s, &alphabet, level, basis)?.iter().map(|w| alphabet.to_word(w)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(x: &[usize], o: &[usize]) -> OpSymbol {
        OpSymbol::new(Party::A, x, o)
    }

    fn b(x: &[usize], o: &[usize]) -> OpSymbol {
        OpSymbol::new(Party::B, x, o)
    }

    #[test]
    fn projectivity() {
        let w = OpWord::new(vec![a(&[0], &[0]), a(&[0], &[0])]);
        assert_eq!(reduce(&w), CanonicalForm::Word(OpWord::new(vec![a(&[0], &[0])])));
    }

    #[test]
    fn cross_prefix_orthogonality() {
        let w = OpWord::new(vec![b(&[0, 1], &[0, 0]), b(&[0, 0], &[1, 1])]);
        assert_eq!(reduce(&w), CanonicalForm::Zero);
    }

    #[test]
    fn parties_commute() {
        let w = OpWord::new(vec![b(&[0, 0], &[0, 0]), a(&[1], &[1])]);
        assert_eq!(reduce(&w), CanonicalForm::Word(OpWord::new(vec![a(&[1], &[1]), b(&[0, 0], &[0, 0])])));
    }

    #[test]
    fn shared_prefix_same_output_is_free() {
        let w = OpWord::new(vec![b(&[0, 0], &[0, 0]), b(&[0, 1], &[0, 1])]);
        assert_eq!(reduce(&w), CanonicalForm::Word(w.clone()));
    }

    #[test]
    fn different_first_inputs_are_free() {
        let w = OpWord::new(vec![b(&[0, 0], &[0, 0]), b(&[1, 0], &[1, 1])]);
        assert_eq!(reduce(&w), CanonicalForm::Word(w.clone()));
    }

    #[test]
    fn deletion_exposes_new_neighbours() {
        // A0 A0 A0' -> A0 A0' -> zero (same input, different outcome)
        let w = OpWord::new(vec![a(&[0], &[0]), a(&[0], &[0]), a(&[0], &[1])]);
        assert_eq!(reduce(&w), CanonicalForm::Zero);
        // interleaved B letters do not separate A letters
        let w = OpWord::new(vec![a(&[0], &[0]), b(&[0], &[0]), a(&[0], &[0])]);
        assert_eq!(reduce(&w), CanonicalForm::Word(OpWord::new(vec![a(&[0], &[0]), b(&[0], &[0])])));
    }

    #[test]
    fn adjoint_reverses() {
        assert_eq!(adjoint(&OpWord::identity()), OpWord::identity());
        let w = OpWord::new(vec![a(&[0], &[0]), b(&[0, 0], &[0, 0]), b(&[1, 1], &[1, 1])]);
        let r = OpWord::new(vec![b(&[1, 1], &[1, 1]), b(&[0, 0], &[0, 0]), a(&[0], &[0])]);
        assert_eq!(adjoint(&w), r);
    }

    #[test]
    fn rendering() {
        assert_eq!(b(&[0, 1], &[1, 0]).to_string(), "B[0,1|1,0]");
        assert_eq!(OpWord::identity().to_string(), "1");
    }

    #[test]
    fn level_set_sizes() {
        let chsh = ScenarioSpec::chsh();
        assert_eq!(generate_level_set(&chsh, &LevelSpec::Degree(1)).unwrap().len(), 9);
        assert_eq!(generate_level_set(&chsh, &LevelSpec::OnePlusAb).unwrap().len(), 25);
        let g = ScenarioSpec::gallego();
        assert_eq!(generate_level_set(&g, &LevelSpec::OnePlusAb).unwrap().len(), 85);
        let cg = generate_level_set_with(&chsh, &LevelSpec::Degree(1), BasisMode::CollinsGisin).unwrap();
        assert_eq!(cg.len(), 5);
    }

    #[test]
    fn level_set_starts_with_identity_and_is_nested() {
        let g = ScenarioSpec::gallego();
        let s1 = generate_level_set(&g, &LevelSpec::Degree(1)).unwrap();
        let s2 = generate_level_set(&g, &LevelSpec::Degree(2)).unwrap();
        assert!(s1[0].is_identity() && s2[0].is_identity());
        assert!(s2.len() >= s1.len());
        let set2: HashSet<_> = s2.iter().collect();
        assert!(s1.iter().all(|w| set2.contains(w)));
    }

    #[test]
    fn level_parsing() {
        assert_eq!("1+AB".parse::<LevelSpec>().unwrap(), LevelSpec::OnePlusAb);
        assert_eq!("2".parse::<LevelSpec>().unwrap(), LevelSpec::Degree(2));
        assert!("1+BA".parse::<LevelSpec>().is_err());
        assert!("0".parse::<LevelSpec>().is_err());
    }

    #[test]
    fn interned_key_matches_symbol_key() {
        let s = ScenarioSpec::gallego();
        let al = Alphabet::new(&s);
        let w = vec![3u16, 0, 10, 7, 12];
        let ids = al.reduce(&w).map(|r| al.key(r));
        let sym = moment_key(&al.to_word(&w));
        assert_eq!(ids.map(|k| al.to_word(&k)), sym.map(|k| k.0));
    }
}
