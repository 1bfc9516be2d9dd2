//! Block-diagonal semidefinite programs in standard form.
//!
//! A problem is the primal/dual pair
//!
//! ```text
//! (P)  maximize  tr(C X)   s.t.  tr(A_k X) = b_k,  X ⪰ 0
//! (D)  minimize  b·y       s.t.  Z = Σ_k y_k A_k − C ⪰ 0
//! ```
//!
//! which is also the reading of the SDPA sparse format (`c = b`, `F_0 = C`,
//! `F_k = A_k`). [`Side`] records which of the two carries the modelled
//! variables, so that reported values and certified bounds are expressed in
//! the caller's terms.

mod ipm;
mod presolve;
mod sdpa;
mod verify;

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ipm::solve;
pub use sdpa::{export_sdpa, import_sdpa, read_sdpa, write_sdpa};
pub use verify::{verified_dual_bound, verified_dual_bound_with, VerifyConfig};

/// One upper-triangle entry `(block, row, col, value)` with `row ≤ col`, 0-based.
pub type Entry = (usize, usize, usize, f64);

/// Sparse symmetric block-diagonal matrix stored by its upper triangle.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseSym {
    pub entries: Vec<Entry>,
}

impl SparseSym {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `v` at `(i, j)`; the mirrored entry is implied.
    pub fn push(&mut self, block: usize, i: usize, j: usize, v: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.entries.push((block, i, j, v));
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Merge duplicate positions, drop zeros and sort.
    pub fn canonical(&self) -> SparseSym {
        let mut e = self.entries.clone();
        e.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
        let mut out: Vec<Entry> = Vec::with_capacity(e.len());
        for t in e {
            match out.last_mut() {
                Some(l) if (l.0, l.1, l.2) == (t.0, t.1, t.2) => l.3 += t.3,
                _ => out.push(t),
            }
        }
        out.retain(|t| t.3 != 0.0);
        SparseSym { entries: out }
    }

    /// `tr(self · X)` for dense symmetric blocks.
    pub fn dot(&self, x: &[nalgebra::DMatrix<f64>]) -> f64 {
        self.entries
            .iter()
            .map(|&(b, i, j, v)| if i == j { v * x[b][(i, i)] } else { 2.0 * v * x[b][(i, j)] })
            .sum()
    }

    /// Adds `alpha · self` into dense symmetric blocks.
    pub fn add_to(&self, alpha: f64, out: &mut [nalgebra::DMatrix<f64>]) {
        for &(b, i, j, v) in &self.entries {
            out[b][(i, j)] += alpha * v;
            if i != j {
                out[b][(j, i)] += alpha * v;
            }
        }
    }
}

/// Which side of the pair carries the modelled variables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// the model optimizes `tr(C X)` over `X`
    #[default]
    Primal,
    /// the model optimizes over `y`; its objective has been folded into `b`
    Dual,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[default]
    Maximize,
    Minimize,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Maximize => "maximize",
            Sense::Minimize => "minimize",
        })
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Primal => "primal",
            Side::Dual => "dual",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SdpStandardForm {
    pub block_sizes: Vec<usize>,
    /// `C`
    pub objective: SparseSym,
    /// `A_k`
    pub constraints: Vec<SparseSym>,
    /// `b`
    pub rhs: Vec<f64>,
    pub side: Side,
    pub sense: Sense,
    /// constant added to the model's objective
    pub offset: f64,
}

impl SdpStandardForm {
    pub fn new(block_sizes: Vec<usize>) -> Self {
        Self { block_sizes, ..Default::default() }
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn add_constraint(&mut self, a: SparseSym, b: f64) {
        self.constraints.push(a);
        self.rhs.push(b);
    }

    /// `±1` such that the model's value is `offset + sign · p*`, where `p*`
    /// is the common optimum of (P) and (D).
    pub fn value_sign(&self) -> f64 {
        match (self.side, self.sense) {
            (Side::Primal, Sense::Maximize) | (Side::Dual, Sense::Minimize) => 1.0,
            _ => -1.0,
        }
    }

    pub fn model_value(&self, p: f64) -> f64 {
        self.offset + self.value_sign() * p
    }

    /// Structural checks: block sizes, index ranges, finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.constraints.len() != self.rhs.len() {
            return Err(Error::Dimension(format!(
                "{} constraint matrices but {} right-hand sides",
                self.constraints.len(),
                self.rhs.len()
            )));
        }
        if self.block_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Dimension("block sizes must be positive".into()));
        }
        let check = |m: &SparseSym, what: &str| -> Result<()> {
            for &(b, i, j, v) in &m.entries {
                let n = *self
                    .block_sizes
                    .get(b)
                    .ok_or_else(|| Error::Dimension(format!("{what}: block {b} does not exist")))?;
                if i >= n || j >= n {
                    return Err(Error::Dimension(format!("{what}: entry ({i}, {j}) outside block {b} of size {n}")));
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("{what}: entry ({b}, {i}, {j})")));
                }
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for (k, a) in self.constraints.iter().enumerate() {
            check(a, &format!("constraint {}", k + 1))?;
        }
        if let Some(k) = self.rhs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("right-hand side {}", k + 1)));
        }
        if !self.offset.is_finite() {
            return Err(Error::NonFinite("offset".into()));
        }
        Ok(())
    }

    /// Same problem with every matrix in canonical entry order.
    pub fn canonical(&self) -> SdpStandardForm {
        SdpStandardForm {
            objective: self.objective.canonical(),
            constraints: self.constraints.iter().map(SparseSym::canonical).collect(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { gap_tol: 1e-8, feas_tol: 1e-8, max_iter: 200, verbose: false }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0 && self.feas_tol > 0.0) {
            return Err(Error::InvalidParameter("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::NumericalFailure => "numerical_failure",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// `X` per block
    pub x: Vec<nalgebra::DMatrix<f64>>,
    /// `y`
    pub y: Vec<f64>,
    /// `tr(C X)`
    pub primal_objective: f64,
    /// `b·y`
    pub dual_objective: f64,
    /// `|b·y − tr(C X)|`
    pub gap: f64,
    /// relative `‖A(X) − b‖`
    pub primal_residual: f64,
    /// relative `‖Σ y A − C − Z‖`
    pub dual_residual: f64,
    pub iterations: usize,
}

impl SdpSolution {
    /// Smallest eigenvalue of each primal block.
    pub fn min_eigenvalues(&self) -> Vec<f64> {
        self.x.iter().map(min_eigenvalue).collect()
    }

    /// Structured text dump: status, objectives, gap and per-block `λ_min(X)`.
    pub fn write_report(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "status {}", self.status)?;
        writeln!(w, "iterations {}", self.iterations)?;
        writeln!(w, "primal_objective {:.12e}", self.primal_objective)?;
        writeln!(w, "dual_objective {:.12e}", self.dual_objective)?;
        writeln!(w, "gap {:.3e}", self.gap)?;
        writeln!(w, "primal_residual {:.3e}", self.primal_residual)?;
        writeln!(w, "dual_residual {:.3e}", self.dual_residual)?;
        for (b, l) in self.min_eigenvalues().iter().enumerate() {
            writeln!(w, "block {} lambda_min {:.6e}", b + 1, l)?;
        }
        Ok(())
    }
}

pub(crate) fn min_eigenvalue(m: &nalgebra::DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).0.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Eigenvalues and eigenvectors of the symmetric part of `m`.
///
/// nalgebra's QR iteration can return NaN on matrices with clustered tiny
/// eigenvalues; faer's divide-and-conquer solver is used in that case.
pub(crate) fn sym_eigen(m: &nalgebra::DMatrix<f64>) -> (nalgebra::DVector<f64>, nalgebra::DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let e = sym.clone().symmetric_eigen();
    if e.eigenvalues.iter().chain(e.eigenvectors.iter()).all(|v| v.is_finite()) {
        return (e.eigenvalues, e.eigenvectors);
    }
    let f = faer::Mat::<f64>::from_fn(n, n, |i, j| sym[(i, j)]);
    match f.self_adjoint_eigen(faer::Side::Lower) {
        Ok(evd) => {
            let (s, u) = (evd.S(), evd.U());
            let vals = nalgebra::DVector::from_fn(n, |i, _| s[i]);
            let vecs = nalgebra::DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
            (vals, vecs)
        }
        Err(_) => (e.eigenvalues, e.eigenvectors),
    }
}
