//! Sparse symmetric systems assembled from triplets and their direct
//! solution.

mod multifrontal;
mod ordering;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use num_complex::Complex64;

use crate::error::{Error, Result};
use multifrontal::{LdltFailure, MultifrontalLdlt};
pub use ordering::nested_dissection;

/// Scalar types the solver handles: `f64` and `Complex64`.
pub trait Scalar:
    faer::traits::ComplexField
    + Copy
    + Default
    + PartialEq
    + std::fmt::Debug
    + Send
    + Sync
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    fn modulus(self) -> f64;
    fn finite(self) -> bool;
    fn from_real(v: f64) -> Self;
    fn reciprocal(self) -> Self;
    /// Key used to order duplicate entries deterministically.
    fn bits(self) -> (u64, u64);
}

impl Scalar for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn finite(self) -> bool {
        self.is_finite()
    }
    fn from_real(v: f64) -> Self {
        v
    }
    fn reciprocal(self) -> Self {
        1.0 / self
    }
    fn bits(self) -> (u64, u64) {
        (self.to_bits(), 0)
    }
}

impl Scalar for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn from_real(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    fn reciprocal(self) -> Self {
        self.inv()
    }
    fn bits(self) -> (u64, u64) {
        (self.re.to_bits(), self.im.to_bits())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymmetryTag {
    RealSpd,
    ComplexSymmetric,
    /// Symmetric but indefinite, e.g. a constrained saddle-point system.
    SymmetricIndefinite,
}

/// Square sparse matrix in compressed row storage.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => T::default(),
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let mut s = T::default();
                for (j, v) in self.row(i) {
                    s += v * x[j];
                }
                s
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.modulus()))
    }

    /// `max |A - A^T|` (non-conjugating transpose).
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).modulus());
            }
        }
        m
    }
}

/// A square system collected as triplets; duplicates are summed on
/// compression.
#[derive(Clone, Debug)]
pub struct SparseSystem<T> {
    pub n: usize,
    pub tag: SymmetryTag,
    /// Name used in error messages.
    pub label: String,
    triplets: Vec<(usize, usize, T)>,
    pub coords: Option<Vec<[f64; 3]>>,
}

impl<T: Scalar> SparseSystem<T> {
    pub fn new(n: usize, tag: SymmetryTag, label: impl Into<String>) -> Self {
        Self {
            n,
            tag,
            label: label.into(),
            triplets: Vec::new(),
            coords: None,
        }
    }

    /// Attaches one point per unknown, used for the fill-reducing ordering.
    pub fn with_coords(mut self, coords: Vec<[f64; 3]>) -> Self {
        assert_eq!(coords.len(), self.n);
        self.coords = Some(coords);
        self
    }

    pub fn with_capacity(n: usize, tag: SymmetryTag, label: impl Into<String>, cap: usize) -> Self {
        let mut s = Self::new(n, tag, label);
        s.triplets.reserve(cap);
        s
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(i < self.n && j < self.n);
        self.triplets.push((i, j, v));
    }

    pub fn extend(&mut self, entries: impl IntoIterator<Item = (usize, usize, T)>) {
        self.triplets.extend(entries);
    }

    pub fn n_triplets(&self) -> usize {
        self.triplets.len()
    }

    /// Sums duplicates in a fixed order so that any permutation of the same
    /// triplets compresses to a bit-identical matrix.
    pub fn compress(&self) -> CsrMatrix<T> {
        let mut t = self.triplets.clone();
        t.sort_unstable_by_key(|a| (a.0, a.1, a.2.bits()));
        let mut row_ptr = vec![0; self.n + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<T> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Relative residual required of every solve.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Pivots below this fraction of the largest matrix entry are rejected.
pub const PIVOT_TOL: f64 = 1e-14;
/// Largest system handed to the pivoting LU when `L D L^T` fails.
pub const LU_FALLBACK_LIMIT: usize = 20_000;

enum Backend<T: Scalar> {
    Ldlt(MultifrontalLdlt<T>),
    Lu(faer::sparse::linalg::solvers::Lu<usize, T>),
}

/// A factorized system reusable for any number of right-hand sides.
///
/// Symmetric tags use a multifrontal `L D L^T` without pivoting, ordered by
/// coordinate nested dissection when coordinates are supplied and by AMD
/// otherwise; a numerically failed `L D L^T` of a moderate system falls back
/// to sparse LU with partial pivoting. Indefinite systems go straight to LU.
pub struct Factorization<T: Scalar> {
    pub matrix: CsrMatrix<T>,
    pub label: String,
    pub tag: SymmetryTag,
    backend: Backend<T>,
    pub tolerance: f64,
}

impl<T: Scalar> Factorization<T> {
    pub fn new(system: &SparseSystem<T>) -> Result<Self> {
        let matrix = system.compress();
        Self::from_csr(matrix, &system.label, system.tag, system.coords.as_deref())
    }

    pub fn from_csr(
        matrix: CsrMatrix<T>,
        label: &str,
        tag: SymmetryTag,
        coords: Option<&[[f64; 3]]>,
    ) -> Result<Self> {
        let singular = |detail: String| Error::Singular {
            tag: label.to_string(),
            detail,
        };
        if matrix.values.iter().any(|v| !v.finite()) {
            return Err(singular("non-finite matrix entry".into()));
        }
        let scale = matrix.max_abs();
        if scale == 0.0 && matrix.n > 0 {
            return Err(singular("zero matrix".into()));
        }
        let asym = matrix.asymmetry();
        if asym > 1e-12 * scale {
            return Err(Error::Solver {
                tag: label.to_string(),
                detail: format!("{tag:?} matrix is not symmetric: max |A - A^T| = {asym:e}"),
            });
        }
        let ldlt = match tag {
            SymmetryTag::SymmetricIndefinite => None,
            _ => {
                let perm = coords.map(|c| nested_dissection(&matrix, c, 64));
                match MultifrontalLdlt::factorize(&matrix, perm.as_deref(), PIVOT_TOL * scale) {
                    Ok(f) => Some(f),
                    Err(LdltFailure::Symbolic(d)) => {
                        return Err(Error::Solver {
                            tag: label.to_string(),
                            detail: d,
                        })
                    }
                    Err(LdltFailure::SmallPivot { column, value }) => {
                        if matrix.n > LU_FALLBACK_LIMIT {
                            return Err(singular(format!(
                                "pivot {value:e} at unknown {column} is below {PIVOT_TOL:e} of the largest entry"
                            )));
                        }
                        None
                    }
                }
            }
        };
        let backend = match ldlt {
            Some(f) => Backend::Ldlt(f),
            None => Backend::Lu(lu_factor(&matrix, label)?),
        };
        let mut f = Self {
            matrix,
            label: label.to_string(),
            tag,
            backend,
            tolerance: RESIDUAL_TOL,
        };
        // Probe the factorization once; a poor LDL^T gets replaced by LU.
        if matches!(f.backend, Backend::Ldlt(_)) && f.n() <= LU_FALLBACK_LIMIT && f.n() > 0 {
            let probe: Vec<T> = (0..f.n()).map(|i| T::from_real(1.0 + (i % 7) as f64)).collect();
            if f.solve(&probe).is_err() {
                f.backend = Backend::Lu(lu_factor(&f.matrix, label)?);
            }
        }
        Ok(f)
    }

    pub fn n(&self) -> usize {
        self.matrix.n
    }

    /// Entries stored by the factor (`L D L^T` only).
    pub fn factor_entries(&self) -> Option<usize> {
        match &self.backend {
            Backend::Ldlt(f) => Some(f.factor_entries()),
            Backend::Lu(_) => None,
        }
    }

    fn apply_inverse(&self, cols: &mut [Vec<T>]) {
        match &self.backend {
            Backend::Ldlt(f) => f.solve_in_place(cols),
            Backend::Lu(lu) => {
                let n = self.n();
                let k = cols.len();
                let mut x = Mat::<T>::from_fn(n, k, |i, j| cols[j][i]);
                lu.solve_in_place(x.as_mut());
                for (j, c) in cols.iter_mut().enumerate() {
                    for (i, v) in c.iter_mut().enumerate() {
                        *v = x[(i, j)];
                    }
                }
            }
        }
    }

    /// Solves for every column of `rhs`, with up to two steps of iterative
    /// refinement; fails if a relative residual stays above the tolerance.
    pub fn solve_many(&self, rhs: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        let n = self.n();
        for b in rhs {
            if b.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "rhs of length {} for a system of size {n}",
                    b.len()
                )));
            }
        }
        let mut out: Vec<Vec<T>> = rhs.to_vec();
        self.apply_inverse(&mut out);
        for (j, b) in rhs.iter().enumerate() {
            let bnorm = l2(b);
            if bnorm == 0.0 {
                out[j].iter_mut().for_each(|v| *v = T::default());
                continue;
            }
            let mut rel = f64::INFINITY;
            for step in 0..3 {
                if out[j].iter().any(|v| !v.finite()) {
                    break;
                }
                let ax = self.matrix.matvec(&out[j]);
                let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
                rel = l2(&r) / bnorm;
                if rel <= self.tolerance || step == 2 {
                    break;
                }
                let mut d = vec![r];
                self.apply_inverse(&mut d);
                for (o, c) in out[j].iter_mut().zip(&d[0]) {
                    *o += *c;
                }
            }
            if !(rel <= self.tolerance) {
                return Err(Error::Singular {
                    tag: self.label.clone(),
                    detail: format!("relative residual {rel:e} exceeds {:e}", self.tolerance),
                });
            }
        }
        Ok(out)
    }

    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        Ok(self.solve_many(&[rhs.to_vec()])?.pop().unwrap())
    }
}

fn lu_factor<T: Scalar>(matrix: &CsrMatrix<T>, label: &str) -> Result<faer::sparse::linalg::solvers::Lu<usize, T>> {
    let mut entries = Vec::with_capacity(matrix.nnz());
    for i in 0..matrix.n {
        for (j, v) in matrix.row(i) {
            entries.push(Triplet::new(i, j, v));
        }
    }
    let a = SparseColMat::<usize, T>::try_new_from_triplets(matrix.n, matrix.n, &entries).map_err(|e| {
        Error::Solver {
            tag: label.to_string(),
            detail: format!("{e:?}"),
        }
    })?;
    a.sp_lu().map_err(|e| match e {
        LuError::SymbolicSingular { index } => Error::Singular {
            tag: label.to_string(),
            detail: format!("no pivot available at step {index}"),
        },
        LuError::Generic(e) => Error::Solver {
            tag: label.to_string(),
            detail: format!("{e:?}"),
        },
    })
}

fn l2<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.modulus().powi(2)).sum::<f64>().sqrt()
}

/// Factorizes and solves in one call.
pub fn solve_direct<T: Scalar>(system: &SparseSystem<T>, rhs: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    Factorization::new(system)?.solve_many(rhs)
}
