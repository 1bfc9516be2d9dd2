//! Infeasible-start primal-dual interior-point method with the HKM search
//! direction and Mehrotra predictor-corrector steps.

use faer::prelude::*;
use nalgebra::{Cholesky, DMatrix};

use super::presolve::{presolve, Presolved, Reduced};
use super::{SdpSolution, SdpStandardForm, SolveStatus, SolverConfig};
use crate::error::Result;

const STEP_FRACTION: f64 = 0.95;
const DIVERGENCE: f64 = 1e8;
const REFINE_STEPS: usize = 8;
const FEAS_STEPS: usize = 3;
/// accepted gap, relative to `gap_tol`, once progress has stopped
const STALL_GAP_FACTOR: f64 = 100.0;
const FLAT_LIMIT: usize = 6;

pub fn solve(p: &SdpStandardForm, cfg: &SolverConfig) -> Result<SdpSolution> {
    p.validate()?;
    cfg.validate()?;
    let r = match presolve(p) {
        Presolved::Infeasible(why) => {
            if cfg.verbose {
                eprintln!("presolve: {why}");
            }
            return Ok(finish(p, SolveStatus::Infeasible, None, 0));
        }
        Presolved::Reduced(r) => r,
    };
    if r.m() == 0 {
        // every remaining block is constant and −C ⪰ 0: X = 0, y = 0
        return Ok(finish(p, SolveStatus::Optimal, None, 0));
    }
    let (status, it, iters) = Ipm::new(&r, cfg).run();
    Ok(finish(p, status, Some((&r, &it)), iters))
}

struct Iterate {
    x: Vec<DMatrix<f64>>,
    y: Vec<f64>,
    z: Vec<DMatrix<f64>>,
}

/// Lift a reduced iterate and evaluate it on the original problem.
fn finish(p: &SdpStandardForm, status: SolveStatus, it: Option<(&Reduced, &Iterate)>, iterations: usize) -> SdpSolution {
    let mut x: Vec<DMatrix<f64>> = p.block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    let mut y = vec![0.0; p.num_constraints()];
    if let Some((r, it)) = it {
        for (blk, xb) in r.blocks.iter().zip(&it.x) {
            for (a, &i) in blk.keep.iter().enumerate() {
                for (bb, &j) in blk.keep.iter().enumerate() {
                    x[blk.orig][(i, j)] = xb[(a, bb)];
                }
            }
        }
        for (k, &orig) in r.cons.iter().enumerate() {
            y[orig] = it.y[k];
        }
    }
    let primal_objective = p.objective.dot(&x);
    let dual_objective: f64 = p.rhs.iter().zip(&y).map(|(b, y)| b * y).sum();
    let bnorm = p.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let primal_residual = p
        .constraints
        .iter()
        .zip(&p.rhs)
        .map(|(a, &b)| (a.dot(&x) - b).powi(2))
        .sum::<f64>()
        .sqrt()
        / (1.0 + bnorm);
    // Z is reported through its definition; the residual measures Z's distance from the PSD cone
    let mut z: Vec<DMatrix<f64>> = p.block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    p.objective.add_to(-1.0, &mut z);
    for (a, &v) in p.constraints.iter().zip(&y) {
        a.add_to(v, &mut z);
    }
    let cnorm = p.objective.entries.iter().map(|e| e.3 * e.3).sum::<f64>().sqrt();
    let neg: f64 = z.iter().map(|zb| (-super::min_eigenvalue(zb)).max(0.0)).fold(0.0, f64::max);
    let dual_residual = neg / (1.0 + cnorm);
    let gap = (dual_objective - primal_objective).abs() / (1.0 + primal_objective.abs() + dual_objective.abs());
    SdpSolution {
        status,
        x,
        y,
        primal_objective,
        dual_objective,
        gap,
        primal_residual,
        dual_residual,
        iterations,
    }
}

struct Ipm<'a> {
    r: &'a Reduced,
    cfg: &'a SolverConfig,
    n: f64,
    bnorm: f64,
    cnorm: f64,
    /// `tr(A_i A_j)` and its factor, for restoring `A(dX) = r_p`; built on first use
    gram: std::cell::OnceCell<Option<(Mat<f64>, faer::linalg::solvers::Llt<f64>)>>,
}

/// Largest `α ≤ ∞` with `M + α D ⪰ 0`, given the Cholesky factor of `M`.
fn max_step(chol: &Cholesky<f64, nalgebra::Dyn>, d: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let t = l.solve_lower_triangular(d).expect("nonsingular factor");
    let s = l.solve_lower_triangular(&t.transpose()).expect("nonsingular factor");
    let s = (&s + s.transpose()) * 0.5;
    let lmin = super::sym_eigen(&s).0.min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

/// Factor a symmetric positive semidefinite matrix, shifting the diagonal
/// when it is numerically singular.
fn factor_shifted(o: &Mat<f64>) -> Option<faer::linalg::solvers::Llt<f64>> {
    if let Ok(l) = o.llt(faer::Side::Lower) {
        return Some(l);
    }
    let dmax = (0..o.nrows()).map(|i| o[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut shift = 1e-14 * dmax;
    for _ in 0..8 {
        let mut s = o.clone();
        for i in 0..o.nrows() {
            s[(i, i)] += shift;
        }
        if let Ok(l) = s.llt(faer::Side::Lower) {
            return Some(l);
        }
        shift *= 100.0;
    }
    None
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn fro(ms: &[DMatrix<f64>]) -> f64 {
    ms.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

fn dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

impl<'a> Ipm<'a> {
    fn new(r: &'a Reduced, cfg: &'a SolverConfig) -> Self {
        let n = r.blocks.iter().map(|b| b.dim()).sum::<usize>() as f64;
        let bnorm = r.b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cnorm = fro(&r.c);
        Self { r, cfg, n, bnorm, cnorm, gram: std::cell::OnceCell::new() }
    }

    fn gram(r: &Reduced) -> Mat<f64> {
        let m = r.m();
        let mut g = Mat::<f64>::zeros(m, m);
        for (blk, list) in r.blocks.iter().zip(&r.by_block) {
            let d = blk.dim();
            let mut at: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d * d];
            for (k, ent) in list {
                for &(i, j, v) in ent {
                    at[i * d + j].push((*k, if i == j { v } else { v * std::f64::consts::SQRT_2 }));
                }
            }
            for cell in &at {
                for &(k, a) in cell {
                    for &(l, b) in cell {
                        g[(k, l)] += a * b;
                    }
                }
            }
        }
        g
    }

    /// Shift `dX` by `Σ w_k A_k` so that `A(dX) = target`.
    fn restore_feasibility(&self, dx: &mut [DMatrix<f64>], target: &[f64]) {
        let gram = self.gram.get_or_init(|| {
            let g = Self::gram(self.r);
            factor_shifted(&g).map(|l| (g, l))
        });
        let Some((g, llt)) = gram else { return };
        let ad = self.r.apply(dx);
        let res: Vec<f64> = target.iter().zip(&ad).map(|(t, a)| t - a).collect();
        let w = Self::solve_schur(g, llt, &res);
        for (d, c) in dx.iter_mut().zip(self.r.adjoint(&w)) {
            *d += c;
        }
    }

    fn initial(&self) -> Iterate {
        let m = self.r.m();
        let mut anorm = vec![0.0f64; m];
        for list in &self.r.by_block {
            for (k, ent) in list {
                for &(i, j, v) in ent {
                    anorm[*k] += if i == j { v * v } else { 2.0 * v * v };
                }
            }
        }
        let anorm: Vec<f64> = anorm.into_iter().map(f64::sqrt).collect();
        let alpha = self.n
            * (0..m)
                .map(|k| (1.0 + self.r.b[k].abs()) / (1.0 + anorm[k]))
                .fold(0.0, f64::max);
        let beta = (1.0 + anorm.iter().copied().fold(self.cnorm, f64::max)) / self.n.sqrt();
        let (alpha, beta) = (alpha.max(1.0) * 10.0, beta.max(1.0) * 10.0);
        Iterate {
            x: self.r.blocks.iter().map(|b| DMatrix::identity(b.dim(), b.dim()) * alpha).collect(),
            y: vec![0.0; m],
            z: self.r.blocks.iter().map(|b| DMatrix::identity(b.dim(), b.dim()) * beta).collect(),
        }
    }

    /// Schur matrix `O_ij = Σ_blocks tr(A_i X A_j Z⁻¹)`.
    fn schur(&self, x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> Mat<f64> {
        let m = self.r.m();
        let mut o = Mat::<f64>::zeros(m, m);
        for ((list, xb), zb) in self.r.by_block.iter().zip(x).zip(zinv) {
            let d = xb.nrows();
            let mut g = DMatrix::<f64>::zeros(d, d);
            let mut support: Vec<usize> = Vec::new();
            let mut mark = vec![usize::MAX; d];
            for (idx, (ki, ent)) in list.iter().enumerate() {
                // G = X A_i Z⁻¹ through the rows A_i touches
                support.clear();
                for &(p, q, _) in ent {
                    for t in [p, q] {
                        if mark[t] != idx {
                            mark[t] = idx;
                            support.push(t);
                        }
                    }
                }
                let s = support.len();
                let mut local = vec![usize::MAX; d];
                for (a, &t) in support.iter().enumerate() {
                    local[t] = a;
                }
                let mut az = DMatrix::<f64>::zeros(s, d);
                for &(p, q, v) in ent {
                    let (lp, lq) = (local[p], local[q]);
                    for c in 0..d {
                        az[(lp, c)] += v * zb[(q, c)];
                    }
                    if p != q {
                        for c in 0..d {
                            az[(lq, c)] += v * zb[(p, c)];
                        }
                    }
                }
                let xs = xb.select_columns(&support);
                g.gemm(1.0, &xs, &az, 0.0);
                for (kj, ent2) in &list[idx..] {
                    let mut acc = 0.0;
                    for &(p, q, v) in ent2 {
                        acc += if p == q { v * g[(p, p)] } else { v * (g[(p, q)] + g[(q, p)]) };
                    }
                    let (a, b) = if ki >= kj { (*ki, *kj) } else { (*kj, *ki) };
                    o[(a, b)] += acc;
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                o[(j, i)] = o[(i, j)];
            }
        }
        o
    }

    /// Solve `O d = rhs` with iterative refinement against the unshifted `O`.
    fn solve_schur(o: &Mat<f64>, llt: &faer::linalg::solvers::Llt<f64>, rhs: &[f64]) -> Vec<f64> {
        let m = rhs.len();
        let b = Mat::<f64>::from_fn(m, 1, |i, _| rhs[i]);
        let bnorm = b.norm_l2().max(1e-300);
        let mut d = b.clone();
        llt.solve_in_place(d.as_mut());
        let mut best = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            let mut res = &b - o * &d;
            let rn = res.norm_l2();
            if rn <= 1e-15 * bnorm || rn >= 0.5 * best {
                break;
            }
            best = rn;
            llt.solve_in_place(res.as_mut());
            d += &res;
        }
        (0..m).map(|i| d[(i, 0)]).collect()
    }

    fn run(&self) -> (SolveStatus, Iterate, usize) {
        let r = self.r;
        let mut it = self.initial();
        let mut stalls = 0;
        let mut best_gap = f64::INFINITY;
        let mut flat = 0;
        for iter in 0..self.cfg.max_iter {
            let zchol: Vec<_> = match it.z.iter().map(|z| Cholesky::new(z.clone())).collect::<Option<Vec<_>>>() {
                Some(c) => c,
                None => return (SolveStatus::NumericalFailure, it, iter),
            };
            let xchol: Vec<_> = match it.x.iter().map(|x| Cholesky::new(x.clone())).collect::<Option<Vec<_>>>() {
                Some(c) => c,
                None => return (SolveStatus::NumericalFailure, it, iter),
            };
            let zinv: Vec<DMatrix<f64>> = zchol.iter().map(|c| sym(c.inverse())).collect();

            let ax = r.apply(&it.x);
            let rp: Vec<f64> = r.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let mut fd = r.adjoint(&it.y);
            for ((f, c), z) in fd.iter_mut().zip(&r.c).zip(&it.z) {
                *f -= c;
                *f -= z;
            }
            let pobj = dot(&r.c, &it.x);
            let dobj: f64 = r.b.iter().zip(&it.y).map(|(b, y)| b * y).sum();
            let pinf = rp.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + self.bnorm);
            let dinf = fro(&fd) / (1.0 + self.cnorm);
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            let mu = dot(&it.x, &it.z) / self.n;
            if self.cfg.verbose {
                eprintln!("{iter:3} p {pobj:+.9e} d {dobj:+.9e} pinf {pinf:.2e} dinf {dinf:.2e} gap {gap:.2e} mu {mu:.2e}");
            }
            let feasible = pinf < self.cfg.feas_tol && dinf < self.cfg.feas_tol;
            if feasible && gap < self.cfg.gap_tol {
                return (SolveStatus::Optimal, it, iter);
            }
            if !feasible || gap < 0.99 * best_gap {
                best_gap = if feasible { gap } else { f64::INFINITY };
                flat = 0;
            } else {
                flat += 1;
            }
            if stalls >= 3 || flat >= FLAT_LIMIT {
                let status = if feasible && gap < STALL_GAP_FACTOR * self.cfg.gap_tol {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::NumericalFailure
                };
                return (status, it, iter);
            }
            // divergence: a ray certifying infeasibility of one side
            let rp_abs = pinf * (1.0 + self.bnorm);
            let fd_abs = dinf * (1.0 + self.cnorm);
            if dobj < -DIVERGENCE && fd_abs / dobj.abs() < 1e-6 {
                return (SolveStatus::Infeasible, it, iter);
            }
            if pobj > DIVERGENCE && rp_abs / pobj.abs() < 1e-6 {
                return (SolveStatus::Infeasible, it, iter);
            }
            if fro(&it.x) > 1e12 || fro(&it.z) > 1e12 {
                return (SolveStatus::NumericalFailure, it, iter);
            }

            let o = self.schur(&it.x, &zinv);
            let Some(llt) = factor_shifted(&o) else {
                return (SolveStatus::NumericalFailure, it, iter);
            };

            // X Fd Z⁻¹
            let xfz: Vec<DMatrix<f64>> =
                it.x.iter().zip(&fd).zip(&zinv).map(|((x, f), zi)| x * f * zi).collect();

            let direction = |sigma_mu: f64, corr: Option<&[DMatrix<f64>]>| {
                let mut t: Vec<DMatrix<f64>> = zinv
                    .iter()
                    .zip(&xfz)
                    .map(|(zi, xf)| zi * sigma_mu - xf)
                    .collect();
                if let Some(c) = corr {
                    for (tb, cb) in t.iter_mut().zip(c) {
                        *tb -= cb;
                    }
                }
                let rhs: Vec<f64> = r.apply(&t).iter().zip(&r.b).map(|(a, b)| a - b).collect();
                let dy = Self::solve_schur(&o, &llt, &rhs);
                let mut dz = r.adjoint(&dy);
                for (d, f) in dz.iter_mut().zip(&fd) {
                    *d += f;
                }
                let mut dx: Vec<DMatrix<f64>> = (0..dz.len())
                    .map(|b| {
                        let mut d = &zinv[b] * sigma_mu - &it.x[b] - &it.x[b] * &dz[b] * &zinv[b];
                        if let Some(c) = corr {
                            d -= &c[b];
                        }
                        sym(d)
                    })
                    .collect();
                // roundoff in X dZ Z⁻¹ leaves A(dX) ≠ r_p; correct in the same metric
                let resid = |dx: &[DMatrix<f64>]| -> (Vec<f64>, f64) {
                    let adx = r.apply(dx);
                    let err: Vec<f64> = rp.iter().zip(&adx).map(|(t, a)| t - a).collect();
                    let en = err.iter().map(|v| v * v).sum::<f64>().sqrt();
                    (err, en)
                };
                let (mut err, mut en) = resid(&dx);
                for _ in 0..FEAS_STEPS {
                    if en <= 1e-14 * (1.0 + self.bnorm) {
                        break;
                    }
                    let w = Self::solve_schur(&o, &llt, &err);
                    let aw = r.adjoint(&w);
                    let trial: Vec<DMatrix<f64>> =
                        (0..dx.len()).map(|b| &dx[b] + sym(&it.x[b] * &aw[b] * &zinv[b])).collect();
                    let (e2, n2) = resid(&trial);
                    if n2 >= 0.5 * en {
                        break;
                    }
                    dx = trial;
                    err = e2;
                    en = n2;
                }
                if en > 1e-14 * (1.0 + self.bnorm) {
                    self.restore_feasibility(&mut dx, &rp);
                }
                (dx, dy, dz)
            };
            let steps = |dx: &[DMatrix<f64>], dz: &[DMatrix<f64>]| {
                let ap = xchol.iter().zip(dx).map(|(c, d)| max_step(c, d)).fold(f64::INFINITY, f64::min);
                let ad = zchol.iter().zip(dz).map(|(c, d)| max_step(c, d)).fold(f64::INFINITY, f64::min);
                (ap, ad)
            };

            // predictor
            let (dxa, _, dza) = direction(0.0, None);
            let (apm, adm) = steps(&dxa, &dza);
            let (ap, ad) = ((STEP_FRACTION * apm).min(1.0), (STEP_FRACTION * adm).min(1.0));
            let mut mu_aff = 0.0;
            for b in 0..dxa.len() {
                let xa = &it.x[b] + &dxa[b] * ap;
                let za = &it.z[b] + &dza[b] * ad;
                mu_aff += xa.dot(&za);
            }
            mu_aff /= self.n;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // corrector
            let corr: Vec<DMatrix<f64>> = (0..dxa.len()).map(|b| &dxa[b] * &dza[b] * &zinv[b]).collect();
            let (dx, dy, dz) = direction(sigma * mu, Some(&corr));
            let (apm, adm) = steps(&dx, &dz);
            let (ap, ad) = ((STEP_FRACTION * apm).min(1.0), (STEP_FRACTION * adm).min(1.0));
            for b in 0..dx.len() {
                it.x[b] += &dx[b] * ap;
                it.z[b] += &dz[b] * ad;
                let (xs, zs) = (sym(it.x[b].clone()), sym(it.z[b].clone()));
                it.x[b] = xs;
                it.z[b] = zs;
            }
            for (y, d) in it.y.iter_mut().zip(&dy) {
                *y += ad * d;
            }
            if ap < 1e-8 && ad < 1e-8 {
                stalls += 1;
            } else {
                stalls = 0;
            }
        }
        (SolveStatus::MaxIter, it, self.cfg.max_iter)
    }
}
