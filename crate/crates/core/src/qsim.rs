//! Finite-dimensional simulator for sequential measurement strategies,
//! a small library of states and instruments, and the unitary dilation of
//! a two-step sequence into projective operators.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Behavior, Party, PartySpec, ScenarioSpec, StepSpec};

pub type CMat = DMatrix<Complex64>;

const HERM_TOL: f64 = 1e-12;

/// Largest entry modulus.
pub trait MaxAbs {
    fn max_abs(&self) -> f64;
}

impl MaxAbs for CMat {
    fn max_abs(&self) -> f64 {
        self.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(d: usize) -> CMat {
    CMat::identity(d, d)
}

pub fn pauli_x() -> CMat {
    CMat::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
}

pub fn pauli_y() -> CMat {
    let i = Complex64::i();
    CMat::from_row_slice(2, 2, &[c(0.0), -i, i, c(0.0)])
}

pub fn pauli_z() -> CMat {
    CMat::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)])
}

/// `(𝟙 + n·σ)/2` for a Bloch vector `n`.
pub fn bloch_projector(n: [f64; 3]) -> CMat {
    (identity(2) + pauli_x() * c(n[0]) + pauli_y() * c(n[1]) + pauli_z() * c(n[2])) * c(0.5)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_part(m).symmetric_eigen().eigenvalues.min()
}

/// Positive square root of a positive semidefinite matrix.
pub fn psd_sqrt(m: &CMat) -> CMat {
    let e = hermitian_part(m).symmetric_eigen();
    let d = CMat::from_diagonal(&e.eigenvalues.map(|v| c(v.max(0.0).sqrt())));
    &e.eigenvectors * d * e.eigenvectors.adjoint()
}

fn inv_sqrt(m: &CMat) -> Result<CMat> {
    let e = hermitian_part(m).symmetric_eigen();
    if e.eigenvalues.min() <= 1e-300 {
        return Err(Error::InvalidParameter("matrix is singular".into()));
    }
    let d = CMat::from_diagonal(&e.eigenvalues.map(|v| c(1.0 / v.sqrt())));
    Ok(&e.eigenvectors * d * e.eigenvectors.adjoint())
}

/// State on `H_A ⊗ H_B`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub matrix: CMat,
    pub dims: (usize, usize),
}

impl DensityMatrix {
    pub fn new(matrix: CMat, dims: (usize, usize)) -> Result<Self> {
        let d = dims.0 * dims.1;
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Dimension(format!(
                "state is {}x{}, factors give {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if (&matrix - matrix.adjoint()).max_abs() > HERM_TOL {
            return Err(Error::InvalidParameter("state is not Hermitian".into()));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > HERM_TOL || tr.im.abs() > HERM_TOL {
            return Err(Error::InvalidParameter(format!("state has trace {tr}")));
        }
        if min_eigenvalue(&matrix) < -HERM_TOL {
            return Err(Error::InvalidParameter("state is not positive semidefinite".into()));
        }
        Ok(Self { matrix, dims })
    }

    pub fn pure(psi: &[Complex64], dims: (usize, usize)) -> Result<Self> {
        let v = nalgebra::DVector::from_column_slice(psi);
        let n = v.norm();
        let v = v / c(n);
        Self::new(&v * v.adjoint(), dims)
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }
}

/// `|φ⁺⟩ = (|00⟩ + |11⟩)/√2`.
pub fn phi_plus() -> DensityMatrix {
    let s = c(FRAC_1_SQRT_2);
    DensityMatrix::pure(&[s, c(0.0), c(0.0), s], (2, 2)).expect("static state")
}

/// `(1−η)|φ⁺⟩⟨φ⁺| + η 𝟙/4`.
pub fn isotropic_state(eta: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("noise parameter {eta} outside [0, 1]")));
    }
    let m = &phi_plus().matrix * c(1.0 - eta) + identity(4) * c(eta / 4.0);
    DensityMatrix::new(m, (2, 2))
}

/// Instrument for one step: `ops[input][outcome]` lists the Kraus operators.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausSet {
    pub ops: Vec<Vec<Vec<CMat>>>,
}

impl KrausSet {
    pub fn new(ops: Vec<Vec<Vec<CMat>>>) -> Result<Self> {
        let k = Self { ops };
        k.validate()?;
        Ok(k)
    }

    pub fn dim(&self) -> usize {
        self.ops[0][0][0].nrows()
    }

    pub fn inputs(&self) -> usize {
        self.ops.len()
    }

    pub fn step_spec(&self) -> StepSpec {
        StepSpec { outputs_per_input: self.ops.iter().map(Vec::len).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ops.is_empty() || self.ops.iter().any(|o| o.is_empty() || o.iter().any(Vec::is_empty)) {
            return Err(Error::InvalidParameter("every input and outcome needs a Kraus operator".into()));
        }
        let d = self.ops[0][0][0].nrows();
        for (x, outs) in self.ops.iter().enumerate() {
            let mut sum = CMat::zeros(d, d);
            for k in outs.iter().flatten() {
                if k.nrows() != d || k.ncols() != d {
                    return Err(Error::Dimension(format!("Kraus operator for input {x} is not {d}x{d}")));
                }
                sum += k.adjoint() * k;
            }
            let err = (sum - identity(d)).max_abs();
            if err > HERM_TOL {
                return Err(Error::InvalidParameter(format!("Kraus operators of input {x} are incomplete (error {err:.2e})")));
            }
        }
        Ok(())
    }

    /// `Σ_μ K ρ K†`.
    pub fn apply(&self, x: usize, a: usize, rho: &CMat) -> CMat {
        let mut out = CMat::zeros(rho.nrows(), rho.ncols());
        for k in &self.ops[x][a] {
            out += k * rho * k.adjoint();
        }
        out
    }

    /// Projective measurement from orthogonal projectors.
    pub fn projective(per_input: Vec<Vec<CMat>>) -> Result<Self> {
        Self::new(per_input.into_iter().map(|ps| ps.into_iter().map(|p| vec![p]).collect()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequentialStrategy {
    pub state: DensityMatrix,
    /// per party, one instrument per step
    pub parties: [Vec<KrausSet>; 2],
}

impl SequentialStrategy {
    pub fn new(state: DensityMatrix, alice: Vec<KrausSet>, bob: Vec<KrausSet>) -> Result<Self> {
        let s = Self { state, parties: [alice, bob] };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (p, dim) in [(Party::A, self.state.dims.0), (Party::B, self.state.dims.1)] {
            let steps = &self.parties[p.index()];
            if steps.is_empty() {
                return Err(Error::InvalidParameter(format!("party {p} has no steps")));
            }
            for (i, k) in steps.iter().enumerate() {
                k.validate()?;
                if k.dim() != dim {
                    return Err(Error::Dimension(format!("party {p} step {} acts on dimension {}, state factor is {dim}", i + 1, k.dim())));
                }
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> ScenarioSpec {
        let party = |steps: &[KrausSet]| PartySpec { steps: steps.iter().map(KrausSet::step_spec).collect() };
        ScenarioSpec::new(party(&self.parties[0]), party(&self.parties[1]))
    }
}

/// Order in which the two parties' steps are applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    AliceFirst,
    BobFirst,
    Alternating,
}

pub fn sequential_behavior(s: &SequentialStrategy) -> Result<Behavior> {
    sequential_behavior_scheduled(s, Schedule::AliceFirst)
}

/// Probabilities by iterating `ρ ↦ Σ_μ K ρ K†` over every step, in the
/// given interleaving of the two parties, then taking the trace.
pub fn sequential_behavior_scheduled(s: &SequentialStrategy, schedule: Schedule) -> Result<Behavior> {
    s.validate()?;
    let scenario = s.scenario();
    let (da, db) = s.state.dims;
    let na = s.parties[0].len();
    let nb = s.parties[1].len();
    let order: Vec<(Party, usize)> = match schedule {
        Schedule::AliceFirst => (0..na).map(|i| (Party::A, i)).chain((0..nb).map(|i| (Party::B, i))).collect(),
        Schedule::BobFirst => (0..nb).map(|i| (Party::B, i)).chain((0..na).map(|i| (Party::A, i))).collect(),
        Schedule::Alternating => {
            let mut v = Vec::new();
            for i in 0..na.max(nb) {
                if i < na {
                    v.push((Party::A, i));
                }
                if i < nb {
                    v.push((Party::B, i));
                }
            }
            v
        }
    };
    // instruments lifted to the joint space
    let lifted: [Vec<Vec<Vec<Vec<CMat>>>>; 2] = [Party::A, Party::B].map(|p| {
        s.parties[p.index()]
            .iter()
            .map(|k| {
                k.ops
                    .iter()
                    .map(|outs| {
                        outs.iter()
                            .map(|ks| {
                                ks.iter()
                                    .map(|m| match p {
                                        Party::A => kron(m, &identity(db)),
                                        Party::B => kron(&identity(da), m),
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    });
    let events = scenario.layout().events();
    let table = crate::par::map_slice(&events, |e| {
        let mut rho = s.state.matrix.clone();
        for &(p, i) in &order {
            let (x, a) = match p {
                Party::A => (e.x[i], e.a[i]),
                Party::B => (e.y[i], e.b[i]),
            };
            let mut next = CMat::zeros(rho.nrows(), rho.ncols());
            for k in &lifted[p.index()][i][x][a] {
                next += k * &rho * k.adjoint();
            }
            rho = next;
        }
        rho.trace().re
    });
    Behavior::new(scenario, table)
}

/// Two-outcome projective measurement along a Bloch vector; outcome 0 is `+1`.
pub fn pauli_measurement(axes: &[[f64; 3]]) -> KrausSet {
    KrausSet::projective(
        axes.iter()
            .map(|&n| vec![bloch_projector(n), bloch_projector([-n[0], -n[1], -n[2]])])
            .collect(),
    )
    .expect("projective measurement is complete")
}

/// Bob₁'s instrument: `y₁ = 0` measures `σ_z`; `y₁ = 1` applies
/// `K₊ = cos ε |+⟩⟨+| + sin ε |−⟩⟨−|`, `K₋ = −cos ε |−⟩⟨−| + sin ε |+⟩⟨+|`.
pub fn weak_x_instrument(epsilon: f64) -> KrausSet {
    let plus = bloch_projector([1.0, 0.0, 0.0]);
    let minus = bloch_projector([-1.0, 0.0, 0.0]);
    let (co, si) = (epsilon.cos(), epsilon.sin());
    let kp = &plus * c(co) + &minus * c(si);
    let km = &minus * c(-co) + &plus * c(si);
    KrausSet::new(vec![
        vec![vec![bloch_projector([0.0, 0.0, 1.0])], vec![bloch_projector([0.0, 0.0, -1.0])]],
        vec![vec![kp], vec![km]],
    ])
    .expect("complete instrument")
}

/// Elements `(2/3)(𝟙 + v_b·σ)/2` of the symmetric three-outcome POVM.
pub fn trine_povm() -> Vec<CMat> {
    (0..3)
        .map(|b| {
            let t = 2.0 * PI * b as f64 / 3.0;
            bloch_projector([t.sin(), 0.0, t.cos()]) * c(2.0 / 3.0)
        })
        .collect()
}

/// Bob₂'s instrument: `σ_z`, `σ_x`, and the trine POVM through its square roots.
pub fn bob2_instrument() -> KrausSet {
    let z = [bloch_projector([0.0, 0.0, 1.0]), bloch_projector([0.0, 0.0, -1.0])];
    let x = [bloch_projector([1.0, 0.0, 0.0]), bloch_projector([-1.0, 0.0, 0.0])];
    KrausSet::new(vec![
        z.iter().map(|p| vec![p.clone()]).collect(),
        x.iter().map(|p| vec![p.clone()]).collect(),
        trine_povm().iter().map(|m| vec![psd_sqrt(m)]).collect(),
    ])
    .expect("complete instrument")
}

/// Randomness-certification strategy: Alice measures `cos μ σ_z ± sin μ σ_x`
/// with `tan μ = sin 2ε` (input 0 takes `+`); Bob applies
/// [`weak_x_instrument`] then [`bob2_instrument`].
pub fn weak_measurement_strategy(eta: f64, epsilon: f64) -> Result<SequentialStrategy> {
    if !(0.0..=PI / 4.0 + 1e-15).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!("measurement strength {epsilon} outside [0, π/4]")));
    }
    let mu = (2.0 * epsilon).sin().atan();
    let alice = pauli_measurement(&[[mu.sin(), 0.0, mu.cos()], [-mu.sin(), 0.0, mu.cos()]]);
    SequentialStrategy::new(isotropic_state(eta)?, vec![alice], vec![weak_x_instrument(epsilon), bob2_instrument()])
}

/// Single-step CHSH-optimal measurements on the isotropic state:
/// Alice `σ_z, σ_x`; Bob `(σ_z ± σ_x)/√2`.
pub fn chsh_strategy(eta: f64) -> Result<SequentialStrategy> {
    let h = FRAC_1_SQRT_2;
    let alice = pauli_measurement(&[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]);
    let bob = pauli_measurement(&[[h, 0.0, h], [-h, 0.0, h]]);
    SequentialStrategy::new(isotropic_state(eta)?, vec![alice], vec![bob])
}

/// Sequential strategy reaching `2√2` on the Gallego functional: `|φ⁺⟩`,
/// a first Bob that always answers 0 without disturbing the state, a
/// second Bob measuring `σ_x` (`y₂ = 0`) or `σ_z` (`y₂ = 1`), and Alice
/// measuring `(σ_z − σ_x)/√2` and `−(σ_z + σ_x)/√2`.
pub fn gallego_strategy() -> SequentialStrategy {
    let h = FRAC_1_SQRT_2;
    let alice = pauli_measurement(&[[-h, 0.0, h], [-h, 0.0, -h]]);
    let keep = vec![vec![identity(2)], vec![CMat::zeros(2, 2)]];
    let bob1 = KrausSet::new(vec![keep.clone(), keep]).expect("complete instrument");
    let bob2 = pauli_measurement(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
    SequentialStrategy::new(phi_plus(), vec![alice], vec![bob1, bob2]).expect("consistent strategy")
}

/// Unitary with `U (ψ ⊗ |0⟩) = Σ_{a,μ} K_{a,μ} ψ ⊗ |a,μ⟩`, completed by
/// Gram–Schmidt over the standard basis in index order.
fn dilation_unitary(kraus: &[Vec<CMat>], anc: usize) -> CMat {
    let d = kraus[0][0].nrows();
    let n = d * anc;
    let mut u = CMat::zeros(n, n);
    let mut slot = 0;
    for ks in kraus {
        for k in ks {
            for i in 0..d {
                for j in 0..d {
                    // system index i, ancilla index slot; input column j ⊗ |0⟩
                    u[(i * anc + slot, j * anc)] = k[(i, j)];
                }
            }
            slot += 1;
        }
    }
    let mut basis: Vec<nalgebra::DVector<Complex64>> = (0..d).map(|j| u.column(j * anc).into_owned()).collect();
    let mut free_cols: Vec<usize> = (0..n).filter(|c| c % anc != 0).collect();
    free_cols.reverse();
    for e in 0..n {
        if free_cols.is_empty() {
            break;
        }
        let mut v = nalgebra::DVector::<Complex64>::zeros(n);
        v[e] = c(1.0);
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dotc(&v);
                v -= b * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            let v = v / c(norm);
            let col = free_cols.pop().expect("non-empty");
            u.set_column(col, &v);
            basis.push(v);
        }
    }
    u
}

/// Projective realization of one party's measurement sequence.
#[derive(Clone, Debug)]
pub struct Dilation {
    /// system dimension times every ancilla dimension
    pub dim: usize,
    pub system_dim: usize,
    pub ancilla_dims: Vec<usize>,
    /// `U_k^{x}` per step and input, on the full space
    pub unitaries: Vec<Vec<CMat>>,
    /// `Π_a` per step, input and outcome, on the full space
    pub projectors: Vec<Vec<Vec<CMat>>>,
    /// `(inputs, outputs, operator)` for every full sequence
    pub operators: Vec<(Vec<usize>, Vec<usize>, CMat)>,
}

impl Dilation {
    pub fn operator(&self, inputs: &[usize], outputs: &[usize]) -> Option<&CMat> {
        self.operators.iter().find(|(x, a, _)| x == inputs && a == outputs).map(|t| &t.2)
    }

    /// Ancilla state `|0…0⟩⟨0…0|` tensored onto a system operator.
    pub fn embed_state(&self, rho: &CMat) -> CMat {
        let anc: usize = self.ancilla_dims.iter().product();
        let mut zero = CMat::zeros(anc, anc);
        zero[(0, 0)] = c(1.0);
        kron(rho, &zero)
    }
}

/// Dilate a party's sequence (any number of steps) into unitaries and projectors with
/// `A_{a⃗}^{x⃗} = U₁† ⋯ U_n† (𝟙 ⊗ Π_{a₁} ⊗ ⋯ ⊗ Π_{a_n}) U_n ⋯ U₁`.
pub fn build_dilation(steps: &[KrausSet]) -> Result<Dilation> {
    if steps.is_empty() {
        return Err(Error::InvalidParameter("a dilation needs at least one step".into()));
    }
    for k in steps {
        k.validate()?;
    }
    let d = steps[0].dim();
    if steps.iter().any(|k| k.dim() != d) {
        return Err(Error::Dimension("all steps must act on the same system".into()));
    }
    // ancilla k holds (outcome, Kraus index) labels
    let ancilla_dims: Vec<usize> = steps
        .iter()
        .map(|k| k.ops.iter().map(|o| o.iter().map(Vec::len).sum::<usize>()).max().unwrap_or(1).max(1))
        .collect();
    let dim = d * ancilla_dims.iter().product::<usize>();
    // permutation placing ancilla k right after the system
    let lift = |m: &CMat, k: usize| -> CMat {
        let before: usize = ancilla_dims[..k].iter().product();
        let after: usize = ancilla_dims[k + 1..].iter().product();
        // m acts on system ⊗ ancilla_k; embed into system ⊗ anc_0 ⊗ … ⊗ anc_last
        let dk = ancilla_dims[k];
        let mut out = CMat::zeros(dim, dim);
        for s in 0..d {
            for s2 in 0..d {
                for a in 0..dk {
                    for a2 in 0..dk {
                        let v = m[(s * dk + a, s2 * dk + a2)];
                        if v == c(0.0) {
                            continue;
                        }
                        for p in 0..before {
                            for q in 0..after {
                                let r = ((s * before + p) * dk + a) * after + q;
                                let col = ((s2 * before + p) * dk + a2) * after + q;
                                out[(r, col)] = v;
                            }
                        }
                    }
                }
            }
        }
        out
    };
    let mut unitaries = Vec::new();
    let mut projectors = Vec::new();
    for (k, step) in steps.iter().enumerate() {
        let dk = ancilla_dims[k];
        unitaries.push(step.ops.iter().map(|outs| lift(&dilation_unitary(outs, dk), k)).collect::<Vec<_>>());
    }
    // ancilla slots of (step, input, outcome); the last outcome also takes
    // the unused slots so the projectors resolve the identity
    let slots = |k: usize, x: usize, a: usize| -> std::ops::Range<usize> {
        let start: usize = steps[k].ops[x][..a].iter().map(Vec::len).sum();
        if a + 1 == steps[k].ops[x].len() {
            start..ancilla_dims[k]
        } else {
            start..start + steps[k].ops[x][a].len()
        }
    };
    let anc_projector = |k: usize, x: usize, a: usize| -> CMat {
        let dk = ancilla_dims[k];
        let mut pm = CMat::zeros(dk, dk);
        for sl in slots(k, x, a) {
            pm[(sl, sl)] = c(1.0);
        }
        lift(&kron(&identity(d), &pm), k)
    };
    for (k, step) in steps.iter().enumerate() {
        projectors.push(
            (0..step.inputs())
                .map(|x| (0..step.ops[x].len()).map(|a| anc_projector(k, x, a)).collect())
                .collect(),
        );
    }
    let spec = PartySpec { steps: steps.iter().map(KrausSet::step_spec).collect() };
    let mut operators = Vec::new();
    for (x, a) in spec.events() {
        let mut u = identity(dim);
        for k in 0..steps.len() {
            u = &unitaries[k][x[k]] * u;
        }
        let mut proj = identity(dim);
        for k in 0..steps.len() {
            proj = proj * anc_projector(k, x[k], a[k]);
        }
        let op = u.adjoint() * proj * &u;
        operators.push((x, a, op));
    }
    Ok(Dilation { dim, system_dim: d, ancilla_dims, unitaries, projectors, operators })
}

/// Largest violations of the three operator conditions a sequential
/// projective family must satisfy.
#[derive(Clone, Copy, Debug, Default)]
pub struct Fact1Residuals {
    /// `‖A² − A‖` and `‖A A′‖` for equal inputs, different outputs
    pub projectivity: f64,
    /// `Σ` over trailing outputs independent of trailing inputs
    pub noback: f64,
    /// `‖A A′‖` when inputs share a prefix whose outputs differ
    pub cross_prefix: f64,
}

impl Fact1Residuals {
    pub fn max(&self) -> f64 {
        self.projectivity.max(self.noback).max(self.cross_prefix)
    }
}

pub fn fact1_residuals(dil: &Dilation) -> Fact1Residuals {
    let mut r = Fact1Residuals::default();
    let ops = &dil.operators;
    for (x, a, m) in ops {
        r.projectivity = r.projectivity.max((m * m - m).max_abs());
        for (x2, a2, m2) in ops {
            let common = x.iter().zip(x2).take_while(|(p, q)| p == q).count();
            if common >= 1 && a[..common] != a2[..common] {
                let v = (m * m2).max_abs();
                if x == x2 {
                    r.projectivity = r.projectivity.max(v);
                } else {
                    r.cross_prefix = r.cross_prefix.max(v);
                }
            }
        }
    }
    let n = ops.first().map(|o| o.0.len()).unwrap_or(0);
    for k in 1..n {
        // marginal over outputs k.. for each full input tuple, keyed by prefix
        let mut marg: Vec<(Vec<usize>, Vec<usize>, Vec<usize>, CMat)> = Vec::new();
        for (x, a, m) in ops {
            match marg.iter_mut().find(|t| t.0 == x[..k] && t.1 == a[..k] && t.2 == *x) {
                Some(t) => t.3 += m,
                None => marg.push((x[..k].to_vec(), a[..k].to_vec(), x.clone(), m.clone())),
            }
        }
        for t in &marg {
            for u in &marg {
                if t.0 == u.0 && t.1 == u.1 {
                    r.noback = r.noback.max((&t.3 - &u.3).max_abs());
                }
            }
        }
    }
    r
}

/// Behavior of a strategy computed through the dilated projective model.
pub fn dilated_behavior(s: &SequentialStrategy) -> Result<Behavior> {
    let da = build_dilation(&s.parties[0])?;
    let db = build_dilation(&s.parties[1])?;
    let (dim_a, dim_b) = s.state.dims;
    // ρ_AB ⊗ ancillas, arranged as (A ⊗ ancA) ⊗ (B ⊗ ancB)
    let anc_a: usize = da.ancilla_dims.iter().product();
    let anc_b: usize = db.ancilla_dims.iter().product();
    let big = dim_a * anc_a * dim_b * anc_b;
    let mut rho = CMat::zeros(big, big);
    for i in 0..dim_a {
        for j in 0..dim_b {
            for i2 in 0..dim_a {
                for j2 in 0..dim_b {
                    let v = s.state.matrix[(i * dim_b + j, i2 * dim_b + j2)];
                    let r = (i * anc_a) * (dim_b * anc_b) + j * anc_b;
                    let col = (i2 * anc_a) * (dim_b * anc_b) + j2 * anc_b;
                    rho[(r, col)] = v;
                }
            }
        }
    }
    let scenario = s.scenario();
    let events = scenario.layout().events();
    let table = crate::par::map_slice(&events, |e| {
        let a = da.operator(&e.x, &e.a).expect("event of the scenario");
        let b = db.operator(&e.y, &e.b).expect("event of the scenario");
        (kron(a, b) * &rho).trace().re
    });
    Behavior::new(scenario, table)
}

/// Strategy description read from a configuration file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    /// library strategy: `weak`, `chsh` or `gallego`
    pub name: Option<String>,
    pub eta: Option<f64>,
    pub epsilon: Option<f64>,
    pub state: Option<StateConfig>,
    pub alice: Option<Vec<StepConfig>>,
    pub bob: Option<Vec<StepConfig>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateConfig {
    Isotropic { eta: f64 },
    /// row-major `[re, im]` pairs
    Explicit { dims: [usize; 2], matrix: Vec<[f64; 2]> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    pub inputs: Vec<MeasurementConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasurementConfig {
    /// projectors onto `±axis`; outcome 0 is `+`
    Pauli { axis: [f64; 3] },
    /// `y₁ = 1` instrument of [`weak_x_instrument`]
    WeakX { epsilon: f64 },
    /// square roots of the trine POVM
    Trine,
    /// outcome 0 is the identity, the others are zero
    Trivial { outcomes: usize },
    /// `kraus[outcome][index]` as `d×d` row-major `[re, im]` pairs
    Kraus { dim: usize, kraus: Vec<Vec<Vec<[f64; 2]>>> },
}

fn cmat(d: usize, entries: &[[f64; 2]]) -> Result<CMat> {
    if entries.len() != d * d {
        return Err(Error::Dimension(format!("expected {} entries, found {}", d * d, entries.len())));
    }
    Ok(CMat::from_row_iterator(d, d, entries.iter().map(|e| Complex64::new(e[0], e[1]))))
}

impl MeasurementConfig {
    fn kraus(&self) -> Result<Vec<Vec<CMat>>> {
        Ok(match self {
            MeasurementConfig::Pauli { axis } => {
                let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
                if n == 0.0 {
                    return Err(Error::InvalidParameter("measurement axis is zero".into()));
                }
                let u = [axis[0] / n, axis[1] / n, axis[2] / n];
                vec![vec![bloch_projector(u)], vec![bloch_projector([-u[0], -u[1], -u[2]])]]
            }
            MeasurementConfig::WeakX { epsilon } => weak_x_instrument(*epsilon).ops[1].clone(),
            MeasurementConfig::Trine => trine_povm().iter().map(|m| vec![psd_sqrt(m)]).collect(),
            MeasurementConfig::Trivial { outcomes } => {
                let mut v = vec![vec![identity(2)]];
                v.extend((1..*outcomes).map(|_| vec![CMat::zeros(2, 2)]));
                v
            }
            MeasurementConfig::Kraus { dim, kraus } => kraus
                .iter()
                .map(|ks| ks.iter().map(|m| cmat(*dim, m)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?,
        })
    }
}

impl StrategyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn build(&self) -> Result<SequentialStrategy> {
        if let Some(name) = &self.name {
            let eta = self.eta.unwrap_or(0.0);
            return match name.as_str() {
                "weak" => weak_measurement_strategy(eta, self.epsilon.unwrap_or(7.0 * PI / 32.0)),
                "chsh" => chsh_strategy(eta),
                "gallego" => Ok(gallego_strategy()),
                other => Err(Error::InvalidParameter(format!("unknown strategy `{other}`"))),
            };
        }
        let state = match &self.state {
            Some(StateConfig::Isotropic { eta }) => isotropic_state(*eta)?,
            Some(StateConfig::Explicit { dims, matrix }) => {
                DensityMatrix::new(cmat(dims[0] * dims[1], matrix)?, (dims[0], dims[1]))?
            }
            None => return Err(Error::InvalidParameter("strategy needs `name` or `state`".into())),
        };
        let steps = |v: &Option<Vec<StepConfig>>, who: &str| -> Result<Vec<KrausSet>> {
            let v = v.as_ref().ok_or_else(|| Error::InvalidParameter(format!("strategy is missing `{who}`")))?;
            v.iter()
                .map(|s| KrausSet::new(s.inputs.iter().map(MeasurementConfig::kraus).collect::<Result<Vec<_>>>()?))
                .collect()
        };
        SequentialStrategy::new(state, steps(&self.alice, "alice")?, steps(&self.bob, "bob")?)
    }
}

/// Random instrument with `kraus_per_outcome` operators per outcome.
pub fn random_instrument(rng: &mut impl FnMut() -> f64, d: usize, outputs: &[usize], kraus_per_outcome: usize) -> KrausSet {
    let ops = outputs
        .iter()
        .map(|&o| {
            let raw: Vec<Vec<CMat>> = (0..o)
                .map(|_| {
                    (0..kraus_per_outcome)
                        .map(|_| CMat::from_fn(d, d, |_, _| Complex64::new(rng(), rng())))
                        .collect()
                })
                .collect();
            let mut s = CMat::zeros(d, d);
            for k in raw.iter().flatten() {
                s += k.adjoint() * k;
            }
            let n = inv_sqrt(&s).expect("generic Kraus operators are full rank");
            raw.into_iter().map(|ks| ks.into_iter().map(|k| k * &n).collect()).collect()
        })
        .collect();
    KrausSet::new(ops).expect("normalized instrument")
}
