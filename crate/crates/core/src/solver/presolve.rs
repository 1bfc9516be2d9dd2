//! Problem reduction ahead of the interior-point iterations.
//!
//! Rows and columns shared by the kernels of `C` and every `A_k` are
//! linear combinations of the remaining ones for every `y`, so the block can
//! be replaced by the principal submatrix on an independent index set.
//! Blocks no constraint touches are checked and dropped; constraints that
//! vanish on the reduced blocks are dropped or reported infeasible.

use nalgebra::DMatrix;

use super::SdpStandardForm;

/// Reduced block: the kept rows of an original block.
#[derive(Clone, Debug)]
pub(super) struct RBlock {
    pub orig: usize,
    pub keep: Vec<usize>,
}

impl RBlock {
    pub fn dim(&self) -> usize {
        self.keep.len()
    }
}

#[derive(Clone, Debug)]
pub(super) struct Reduced {
    pub blocks: Vec<RBlock>,
    /// original constraint index of each reduced constraint
    pub cons: Vec<usize>,
    pub b: Vec<f64>,
    pub c: Vec<DMatrix<f64>>,
    /// per reduced block: `(reduced constraint, upper-triangle entries)`
    pub by_block: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>>,
}

impl Reduced {
    pub fn m(&self) -> usize {
        self.cons.len()
    }

    /// `Σ_k v_k A_k` per block.
    pub fn adjoint(&self, v: &[f64]) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .zip(&self.by_block)
            .map(|(blk, list)| {
                let mut out = DMatrix::zeros(blk.dim(), blk.dim());
                for (k, ent) in list {
                    let s = v[*k];
                    if s == 0.0 {
                        continue;
                    }
                    for &(i, j, a) in ent {
                        out[(i, j)] += s * a;
                        if i != j {
                            out[(j, i)] += s * a;
                        }
                    }
                }
                out
            })
            .collect()
    }

    /// `tr(A_k M)` for every constraint; `M` need not be symmetric.
    pub fn apply(&self, m: &[DMatrix<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.m()];
        for (list, mb) in self.by_block.iter().zip(m) {
            for (k, ent) in list {
                let mut s = 0.0;
                for &(i, j, a) in ent {
                    s += if i == j { a * mb[(i, i)] } else { a * (mb[(i, j)] + mb[(j, i)]) };
                }
                out[*k] += s;
            }
        }
        out
    }
}

#[derive(Debug)]
pub(super) enum Presolved {
    Reduced(Reduced),
    /// no finite optimum; the message names the reason
    Infeasible(String),
}

const KERNEL_TOL: f64 = 1e-9;
const CONST_TOL: f64 = 1e-12;

pub(super) fn presolve(p: &SdpStandardForm) -> Presolved {
    let nb = p.block_sizes.len();
    let mut c_full: Vec<DMatrix<f64>> = p.block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    p.objective.add_to(1.0, &mut c_full);
    let mut per_block: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>> = vec![Vec::new(); nb];
    for (k, a) in p.constraints.iter().enumerate() {
        let a = a.canonical();
        let mut cur: Option<(usize, Vec<(usize, usize, f64)>)> = None;
        for &(b, i, j, v) in &a.entries {
            match &mut cur {
                Some((cb, list)) if *cb == b => list.push((i, j, v)),
                _ => {
                    if let Some((cb, list)) = cur.take() {
                        per_block[cb].push((k, list));
                    }
                    cur = Some((b, vec![(i, j, v)]));
                }
            }
        }
        if let Some((cb, list)) = cur {
            per_block[cb].push((k, list));
        }
    }

    let mut blocks = Vec::new();
    let mut c = Vec::new();
    let mut lists: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>> = Vec::new();
    for b in 0..nb {
        let n = p.block_sizes[b];
        let keep = independent_rows(n, &c_full[b], &per_block[b]);
        if keep.is_empty() {
            continue;
        }
        let mut pos = vec![usize::MAX; n];
        for (r, &i) in keep.iter().enumerate() {
            pos[i] = r;
        }
        let cb = c_full[b].select_rows(&keep).select_columns(&keep);
        let mut list = Vec::new();
        for (k, ent) in &per_block[b] {
            let e: Vec<(usize, usize, f64)> = ent
                .iter()
                .filter(|&&(i, j, _)| pos[i] != usize::MAX && pos[j] != usize::MAX)
                .map(|&(i, j, v)| {
                    let (a, bb) = (pos[i], pos[j]);
                    if a <= bb {
                        (a, bb, v)
                    } else {
                        (bb, a, v)
                    }
                })
                .collect();
            if !e.is_empty() {
                list.push((*k, e));
            }
        }
        if list.is_empty() {
            // Z = −C on this block for every y
            let lmax = super::sym_eigen(&cb).0.max();
            let scale = 1.0 + cb.abs().max();
            if lmax > CONST_TOL * scale {
                return Presolved::Infeasible(format!("constant block {} is not negative semidefinite in C", b + 1));
            }
            continue;
        }
        blocks.push(RBlock { orig: b, keep });
        c.push(cb);
        lists.push(list);
    }

    let mut used = vec![false; p.num_constraints()];
    for list in &lists {
        for (k, _) in list {
            used[*k] = true;
        }
    }
    let mut cons = Vec::new();
    let mut index = vec![usize::MAX; p.num_constraints()];
    for k in 0..p.num_constraints() {
        if used[k] {
            index[k] = cons.len();
            cons.push(k);
        } else if p.rhs[k].abs() > CONST_TOL * (1.0 + p.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            return Presolved::Infeasible(format!("constraint {} vanishes but has right-hand side {}", k + 1, p.rhs[k]));
        }
    }
    for list in &mut lists {
        for (k, _) in list.iter_mut() {
            *k = index[*k];
        }
    }
    let b = cons.iter().map(|&k| p.rhs[k]).collect();
    Presolved::Reduced(Reduced { blocks, cons, b, c, by_block: lists })
}

/// Rows of a block outside the common kernel's pivot set. Pivots are taken
/// from the last admissible column so later (longer) monomials are dropped
/// first.
fn independent_rows(n: usize, c: &DMatrix<f64>, list: &[(usize, Vec<(usize, usize, f64)>)]) -> Vec<usize> {
    // M = C² + Σ A_k²
    let mut m = c * c;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (_, ent) in list {
        for r in rows.iter_mut() {
            r.clear();
        }
        for &(i, j, v) in ent {
            rows[i].push((j, v));
            if i != j {
                rows[j].push((i, v));
            }
        }
        for r in &rows {
            for &(p, a) in r {
                for &(q, bb) in r {
                    m[(p, q)] += a * bb;
                }
            }
        }
    }
    let scale = m.diagonal().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let (vals, vecs) = super::sym_eigen(&m);
    let kernel: Vec<usize> = (0..n).filter(|&i| vals[i] <= KERNEL_TOL * scale).collect();
    if kernel.is_empty() {
        return (0..n).collect();
    }
    // rows of `k` are kernel vectors; reduce to echelon form
    let mut k = DMatrix::from_fn(kernel.len(), n, |r, col| vecs[(col, kernel[r])]);
    let mut dependent = vec![false; n];
    for r in 0..k.nrows() {
        let big = (0..n).filter(|&j| !dependent[j]).map(|j| k[(r, j)].abs()).fold(0.0, f64::max);
        if big <= 1e-12 {
            continue;
        }
        let piv = (0..n)
            .rev()
            .find(|&j| !dependent[j] && k[(r, j)].abs() >= 0.5 * big)
            .expect("pivot exists");
        dependent[piv] = true;
        let pv = k[(r, piv)];
        for j in 0..n {
            k[(r, j)] /= pv;
        }
        for r2 in 0..k.nrows() {
            if r2 != r {
                let f = k[(r2, piv)];
                if f != 0.0 {
                    for j in 0..n {
                        let v = k[(r, j)];
                        k[(r2, j)] -= f * v;
                    }
                }
            }
        }
    }
    (0..n).filter(|&j| !dependent[j]).collect()
}
