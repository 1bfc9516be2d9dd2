//! Certified bounds that do not rely on solver accuracy.

use nalgebra::DMatrix;

use super::{min_eigenvalue, sym_eigen, SdpSolution, SdpStandardForm, Side};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    /// bound on `tr X` for every feasible `X`; `None` uses the sum of block sizes
    pub trace_bound: Option<f64>,
    /// bound on `|y_k|` at a dual optimum; moments of projector words are at most 1
    pub variable_bound: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { trace_bound: None, variable_bound: 1.0 }
    }
}

pub fn verified_dual_bound(p: &SdpStandardForm, sol: &SdpSolution) -> Result<f64> {
    verified_dual_bound_with(p, sol, &VerifyConfig::default())
}

/// Rigorous bound on the model's optimum, on the side it optimizes toward
/// (an upper bound for maximization, a lower bound for minimization).
///
/// Primal-side models use `y`: with `Z = Σ y_k A_k − C` and
/// `λ⁻ = min(0, λ_min(Z))`, every feasible `X` has `tr(CX) ≤ b·y − λ⁻ τ`.
///
/// Dual-side models use `X` projected onto the PSD cone, `X̃`: with residuals
/// `r = A(X̃) − b` and `|y_k| ≤ ȳ` at the optimum, `b·y ≥ tr(CX̃) − ȳ Σ|r_k|`.
pub fn verified_dual_bound_with(p: &SdpStandardForm, sol: &SdpSolution, cfg: &VerifyConfig) -> Result<f64> {
    p.validate()?;
    let sign = p.value_sign();
    match p.side {
        Side::Primal => {
            if sol.y.len() != p.num_constraints() {
                return Err(Error::MissingDuals(format!(
                    "expected {} multipliers, found {}",
                    p.num_constraints(),
                    sol.y.len()
                )));
            }
            let mut z: Vec<DMatrix<f64>> = p.block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
            p.objective.add_to(-1.0, &mut z);
            for (a, &y) in p.constraints.iter().zip(&sol.y) {
                a.add_to(y, &mut z);
            }
            let lambda = z.iter().map(min_eigenvalue).fold(0.0, f64::min);
            let tau = cfg.trace_bound.unwrap_or_else(|| p.block_sizes.iter().sum::<usize>() as f64);
            let by: f64 = p.rhs.iter().zip(&sol.y).map(|(b, y)| b * y).sum();
            Ok(p.offset + sign * (by - lambda * tau))
        }
        Side::Dual => {
            if sol.x.len() != p.block_sizes.len()
                || sol.x.iter().zip(&p.block_sizes).any(|(x, &n)| x.nrows() != n || x.ncols() != n)
            {
                return Err(Error::MissingDuals("primal blocks are missing or mis-sized".into()));
            }
            let x: Vec<DMatrix<f64>> = sol.x.iter().map(psd_part).collect();
            let slack: f64 = p
                .constraints
                .iter()
                .zip(&p.rhs)
                .map(|(a, &b)| (a.dot(&x) - b).abs())
                .sum();
            let lower = p.objective.dot(&x) - cfg.variable_bound * slack;
            Ok(p.offset + sign * lower)
        }
    }
}

/// Nearest PSD matrix in Frobenius norm.
fn psd_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (mut d, v) = sym_eigen(m);
    d.iter_mut().for_each(|x| *x = x.max(0.0));
    &v * DMatrix::from_diagonal(&d) * v.transpose()
}
