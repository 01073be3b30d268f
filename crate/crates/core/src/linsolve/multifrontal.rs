//! Supernodal multifrontal `L D L^T` factorization of symmetric matrices
//! (real, or complex with a non-conjugating transpose) without pivoting.
//!
//! The supernode partition and row patterns come from faer's symbolic
//! Cholesky analysis; the numeric phase assembles one dense frontal matrix
//! per supernode, eliminates its pivot columns and passes the Schur
//! complement to the parent.

use faer::linalg::matmul::triangular::{matmul, BlockStructure};
use faer::perm::PermRef;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, SymbolicCholeskyRaw, SymmetricOrdering,
};
use faer::sparse::linalg::SupernodalThreshold;
use faer::sparse::SymbolicSparseColMat;
use faer::{Accum, MatMut, MatRef, Par};

use super::{CsrMatrix, Scalar};

const PANEL: usize = 48;

pub(crate) struct Supernode {
    begin: usize,
    end: usize,
    /// Rows below the diagonal block, in permuted numbering.
    pattern: Vec<usize>,
    /// Start of the column-major `(k + p) x k` block in the value array: unit
    /// lower `L11` with `D` on the diagonal, then `L21`.
    offset: usize,
}

pub(crate) struct MultifrontalLdlt<T> {
    n: usize,
    /// `perm[k]`: original index at permuted position `k`.
    perm: Vec<usize>,
    supernodes: Vec<Supernode>,
    values: Vec<T>,
}

#[derive(Debug)]
pub(crate) enum LdltFailure {
    Symbolic(String),
    SmallPivot { column: usize, value: f64 },
}

impl<T: Scalar> MultifrontalLdlt<T> {
    /// `perm` is a fill-reducing ordering (`None` selects AMD); pivots with
    /// modulus at or below `pivot_tol` abort the factorization.
    pub fn factorize(a: &CsrMatrix<T>, perm: Option<&[usize]>, pivot_tol: f64) -> Result<Self, LdltFailure> {
        let n = a.n;
        // Symbolic pattern of the lower triangle in column-major form; the
        // matrix is symmetric so the row-major upper part transposes to it.
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(a.nnz());
        for i in 0..n {
            for (j, _) in a.row(i) {
                if j >= i {
                    row_idx.push(j);
                }
            }
            col_ptr[i + 1] = row_idx.len();
        }
        let pattern = SymbolicSparseColMat::<usize>::new_checked(n, n, col_ptr, None, row_idx);
        let inv: Option<Vec<usize>> = perm.map(|p| {
            let mut inv = vec![0; n];
            for (k, &o) in p.iter().enumerate() {
                inv[o] = k;
            }
            inv
        });
        let ordering = match (perm, inv.as_deref()) {
            (Some(p), Some(i)) => SymmetricOrdering::Custom(PermRef::new_checked(p, i, n)),
            _ => SymmetricOrdering::Amd,
        };
        let params = CholeskySymbolicParams {
            supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
            ..Default::default()
        };
        let symbolic = factorize_symbolic_cholesky(pattern.as_ref(), faer::Side::Lower, ordering, params)
            .map_err(|e| LdltFailure::Symbolic(format!("{e:?}")))?;
        let (fwd, inv) = match symbolic.perm() {
            Some(p) => {
                let (f, i) = p.arrays();
                (f.to_vec(), i.to_vec())
            }
            None => ((0..n).collect(), (0..n).collect()),
        };
        // (begin, end, pattern) of every supernode; a simplicial structure is
        // read as one column per supernode.
        let blocks: Vec<(usize, usize, Vec<usize>)> = match symbolic.raw() {
            SymbolicCholeskyRaw::Supernodal(sn) => (0..sn.n_supernodes())
                .map(|s| {
                    let r = sn.supernode(s);
                    (r.start(), sn.supernode_end()[s], r.pattern().to_vec())
                })
                .collect(),
            SymbolicCholeskyRaw::Simplicial(sm) => (0..n)
                .map(|j| {
                    let rows = &sm.row_idx()[sm.col_ptr()[j]..sm.col_ptr()[j + 1]];
                    let mut pattern: Vec<usize> = rows.iter().copied().filter(|&r| r > j).collect();
                    pattern.sort_unstable();
                    (j, j + 1, pattern)
                })
                .collect(),
        };
        let ns = blocks.len();
        let mut supernodes = Vec::with_capacity(ns);
        let mut offset = 0;
        for (begin, end, pattern) in blocks {
            let k = end - begin;
            let len = (k + pattern.len()) * k;
            supernodes.push(Supernode {
                begin,
                end,
                pattern,
                offset,
            });
            offset += len;
        }
        let mut col_super = vec![0; n];
        for (s, sup) in supernodes.iter().enumerate() {
            col_super[sup.begin..sup.end].fill(s);
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); ns];
        for (s, sup) in supernodes.iter().enumerate() {
            if let Some(&r) = sup.pattern.first() {
                children[col_super[r]].push(s);
            }
        }

        // Permuted lower triangle, stored per column.
        let mut lower_ptr = vec![0usize; n + 1];
        for i in 0..n {
            for (j, _) in a.row(i) {
                let (pi, pj) = (inv[i], inv[j]);
                if pi >= pj {
                    lower_ptr[pj + 1] += 1;
                }
            }
        }
        for j in 0..n {
            lower_ptr[j + 1] += lower_ptr[j];
        }
        let mut fill = lower_ptr.clone();
        let mut lower_row = vec![0usize; lower_ptr[n]];
        let mut lower_val = vec![T::default(); lower_ptr[n]];
        for i in 0..n {
            for (j, v) in a.row(i) {
                let (pi, pj) = (inv[i], inv[j]);
                if pi >= pj {
                    lower_row[fill[pj]] = pi;
                    lower_val[fill[pj]] = v;
                    fill[pj] += 1;
                }
            }
        }

        let mut values = vec![T::default(); offset];
        let mut updates: Vec<Option<Vec<T>>> = (0..ns).map(|_| None).collect();
        let mut pos = vec![usize::MAX; n];
        for s in 0..ns {
            let sup = &supernodes[s];
            let k = sup.end - sup.begin;
            let p = sup.pattern.len();
            let m = k + p;
            for (l, c) in (sup.begin..sup.end).enumerate() {
                pos[c] = l;
            }
            for (l, &r) in sup.pattern.iter().enumerate() {
                pos[r] = k + l;
            }
            let mut front = vec![T::default(); m * m];
            for c in sup.begin..sup.end {
                let lc = pos[c];
                for q in lower_ptr[c]..lower_ptr[c + 1] {
                    front[lc * m + pos[lower_row[q]]] += lower_val[q];
                }
            }
            for &ch in &children[s] {
                let u = updates[ch].take().expect("child update consumed once");
                let cp = &supernodes[ch].pattern;
                let pc = cp.len();
                for jj in 0..pc {
                    let lj = pos[cp[jj]];
                    let src = &u[jj * pc..(jj + 1) * pc];
                    let dst = &mut front[lj * m..(lj + 1) * m];
                    for ii in jj..pc {
                        dst[pos[cp[ii]]] += src[ii];
                    }
                }
            }
            partial_ldlt(&mut front, m, k, pivot_tol).map_err(|(col, value)| LdltFailure::SmallPivot {
                column: fwd[sup.begin + col],
                value,
            })?;
            let dst = &mut values[sup.offset..sup.offset + m * k];
            dst.copy_from_slice(&front[..m * k]);
            if p > 0 {
                let mut u = vec![T::default(); p * p];
                for jj in 0..p {
                    let src = &front[(k + jj) * m + k..(k + jj + 1) * m];
                    u[jj * p + jj..(jj + 1) * p].copy_from_slice(&src[jj..]);
                }
                updates[s] = Some(u);
            }
        }
        Ok(Self {
            n,
            perm: fwd,
            supernodes,
            values,
        })
    }

    pub fn factor_entries(&self) -> usize {
        self.values.len()
    }

    /// Solves `A x = b` in place for each column of `rhs`.
    pub fn solve_in_place(&self, rhs: &mut [Vec<T>]) {
        let n = self.n;
        let mut y = vec![T::default(); n];
        for b in rhs.iter_mut() {
            for k in 0..n {
                y[k] = b[self.perm[k]];
            }
            for sup in &self.supernodes {
                let k = sup.end - sup.begin;
                let m = k + sup.pattern.len();
                let blk = &self.values[sup.offset..sup.offset + m * k];
                for j in 0..k {
                    let xj = y[sup.begin + j];
                    let col = &blk[j * m..(j + 1) * m];
                    for i in j + 1..k {
                        let v = y[sup.begin + i] - col[i] * xj;
                        y[sup.begin + i] = v;
                    }
                    for (l, &r) in sup.pattern.iter().enumerate() {
                        y[r] -= col[k + l] * xj;
                    }
                }
            }
            for sup in &self.supernodes {
                let k = sup.end - sup.begin;
                let m = k + sup.pattern.len();
                let blk = &self.values[sup.offset..sup.offset + m * k];
                for j in 0..k {
                    y[sup.begin + j] *= blk[j * m + j].reciprocal();
                }
            }
            for sup in self.supernodes.iter().rev() {
                let k = sup.end - sup.begin;
                let m = k + sup.pattern.len();
                let blk = &self.values[sup.offset..sup.offset + m * k];
                for j in (0..k).rev() {
                    let col = &blk[j * m..(j + 1) * m];
                    let mut s = y[sup.begin + j];
                    for i in j + 1..k {
                        s -= col[i] * y[sup.begin + i];
                    }
                    for (l, &r) in sup.pattern.iter().enumerate() {
                        s -= col[k + l] * y[r];
                    }
                    y[sup.begin + j] = s;
                }
            }
            for k in 0..n {
                b[self.perm[k]] = y[k];
            }
        }
    }
}

/// Eliminates the first `k` columns of the dense symmetric `m x m` front
/// (lower triangle, column-major), leaving `L` and `D` in those columns and
/// the Schur complement in the trailing block.
fn partial_ldlt<T: Scalar>(f: &mut [T], m: usize, k: usize, tol: f64) -> Result<(), (usize, f64)> {
    let mut j0 = 0;
    let mut v = Vec::new();
    let mut w = Vec::new();
    while j0 < k {
        let j1 = (j0 + PANEL).min(k);
        for j in j0..j1 {
            let d = f[j * m + j];
            if !(d.modulus() > tol) || !d.finite() {
                return Err((j, d.modulus()));
            }
            let dinv = d.reciprocal();
            // Columns j+1..j1 of the panel receive the rank-one update.
            let (left, right) = f.split_at_mut((j + 1) * m);
            let colj = &mut left[j * m..];
            for q in j + 1..j1 {
                let fq = colj[q];
                let lq = fq * dinv;
                let dst = &mut right[(q - j - 1) * m..(q - j) * m];
                for i in q..m {
                    dst[i] -= colj[i] * lq;
                }
            }
            for i in j + 1..m {
                colj[i] *= dinv;
            }
        }
        if j1 < m {
            let r = m - j1;
            let nb = j1 - j0;
            v.clear();
            w.clear();
            v.resize(r * nb, T::default());
            w.resize(r * nb, T::default());
            for (c, j) in (j0..j1).enumerate() {
                let d = f[j * m + j];
                for i in 0..r {
                    let l = f[j * m + j1 + i];
                    v[c * r + i] = l;
                    w[c * r + i] = l * d;
                }
            }
            let lhs = MatRef::from_column_major_slice(&w, r, nb);
            let rhs = MatRef::from_column_major_slice(&v, r, nb);
            let tail = &mut f[j1 * m..];
            let dst = MatMut::from_column_major_slice_with_stride_mut(&mut tail[j1..], r, r, m);
            matmul(
                dst,
                BlockStructure::TriangularLower,
                Accum::Add,
                lhs,
                BlockStructure::Rectangular,
                rhs.transpose(),
                BlockStructure::Rectangular,
                T::from_real(-1.0),
                Par::Seq,
            );
        }
        j0 = j1;
    }
    Ok(())
}
