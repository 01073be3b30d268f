//! Periodic cell problems and homogenized tensors.
//!
//! For each distinct set of sampled coefficients the divergence-regularized
//! curl cell problem (three real vector correctors) and the gradient cell
//! problem (three complex scalar correctors) are solved on the micro torus,
//! and the tensors
//!
//! ```text
//! Mhom_ik = int_Y mu^-1_h (delta_ik + (curl v_k)_i) dy
//! Khom_ik = int_Y kappa_h (delta_ik + (grad v_k)_i) dy
//! ```
//!
//! are formed. The correctors have zero mean in every component.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::coeffs::{CellSamples, CoefficientField, SampledCoefficients};
use crate::error::{Error, Result};
use crate::fespace::{
    p1_local_matrices, vector_p1_curl_rows, vector_p1_div_row, vector_p1_local_matrices,
    PeriodicScalarSpace,
};
use crate::geom::{Vec3, CZERO};
use crate::linsolve::{Factorization, SparseSystem, SymmetryTag};
use crate::mesh::{PeriodicMicroMesh, TetMesh};

pub type RMat3 = [[f64; 3]; 3];
pub type CMat3 = [[Complex64; 3]; 3];

/// Correctors and tensors of one sample set.
#[derive(Clone, Debug)]
pub struct CellSolution {
    /// Vector correctors `v_k`, unknown `3m + c` for master vertex `m`.
    pub curl_correctors: [Vec<f64>; 3],
    /// Scalar correctors `v_k`, one unknown per master vertex.
    pub grad_correctors: [Vec<Complex64>; 3],
    pub mhom: RMat3,
    pub khom: CMat3,
}

/// Cell solutions for every macro element, stored once per sample set.
#[derive(Clone, Debug)]
pub struct CellCorrectorSet {
    pub space: Arc<PeriodicScalarSpace>,
    pub samples: Arc<SampledCoefficients>,
    pub cells: Vec<CellSolution>,
}

impl CellCorrectorSet {
    pub fn micro(&self) -> &PeriodicMicroMesh {
        &self.space.mesh
    }

    pub fn n_elements(&self) -> usize {
        self.samples.n_elements()
    }

    pub fn cell(&self, j: usize) -> &CellSolution {
        &self.cells[self.samples.set_of[j]]
    }

    pub fn mhom(&self, j: usize) -> &RMat3 {
        &self.cell(j).mhom
    }

    pub fn khom(&self, j: usize) -> &CMat3 {
        &self.cell(j).khom
    }

    pub fn sample(&self, j: usize) -> &CellSamples {
        self.samples.get(j)
    }
}

/// Coordinates of the master vertices in the unit cell.
pub fn master_coords(micro: &PeriodicMicroMesh) -> Vec<Vec3> {
    let mut c = vec![[0.0; 3]; micro.n_masters()];
    for (v, &m) in micro.master.iter().enumerate() {
        c[m] = PeriodicMicroMesh::wrap(micro.vertices[v]);
    }
    c
}

fn vector_masters(micro: &PeriodicMicroMesh, t: usize) -> [usize; 12] {
    let m = micro.tet_masters(t);
    let mut out = [0; 12];
    for a in 0..4 {
        for c in 0..3 {
            out[3 * a + c] = 3 * m[a] + c;
        }
    }
    out
}

/// Full periodic system of the vector cell problem (singular: constants
/// per component form the kernel) and the three load columns.
pub fn assemble_curl_cell(mu_inv: &[f64], micro: &PeriodicMicroMesh) -> Result<(SparseSystem<f64>, [Vec<f64>; 3])> {
    let n = 3 * micro.n_masters();
    let mut sys = SparseSystem::with_capacity(n, SymmetryTag::RealSpd, "vector cell", 144 * micro.n_tets());
    let mut rhs = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for t in 0..micro.n_tets() {
        let (cc, dd, r) = vector_p1_local_matrices(micro, t, mu_inv[t])?;
        let dofs = vector_masters(micro, t);
        for a in 0..12 {
            for b in 0..12 {
                sys.add(dofs[a], dofs[b], cc[a][b] + dd[a][b]);
            }
            for k in 0..3 {
                rhs[k][dofs[a]] += r[a][k];
            }
        }
    }
    Ok((sys, rhs))
}

/// Full periodic system of the scalar cell problem and its load columns
/// `-int kappa_h e_k . grad psi`.
pub fn assemble_grad_cell(
    kappa: &[Complex64],
    micro: &PeriodicMicroMesh,
) -> Result<(SparseSystem<Complex64>, [Vec<Complex64>; 3])> {
    let n = micro.n_masters();
    let mut sys = SparseSystem::with_capacity(n, SymmetryTag::ComplexSymmetric, "scalar cell", 16 * micro.n_tets());
    let mut rhs = [vec![CZERO; n], vec![CZERO; n], vec![CZERO; n]];
    for t in 0..micro.n_tets() {
        let (k, c) = p1_local_matrices(micro, t, kappa[t])?;
        let m = micro.tet_masters(t);
        for a in 0..4 {
            for b in 0..4 {
                sys.add(m[a], m[b], k[a][b]);
            }
            for d in 0..3 {
                rhs[d][m[a]] -= c[a][d];
            }
        }
    }
    Ok((sys, rhs))
}

/// Removes the first `pinned` unknowns (one vertex per component), which
/// makes the system nonsingular; the dropped rows hold automatically since
/// the loads are orthogonal to the kernel.
fn pin<T: crate::linsolve::Scalar>(
    sys: &SparseSystem<T>,
    rhs: &[Vec<T>; 3],
    pinned: usize,
    coords: Vec<Vec3>,
) -> (SparseSystem<T>, Vec<Vec<T>>) {
    let a = sys.compress();
    let n = a.n - pinned;
    let mut red = SparseSystem::with_capacity(n, sys.tag, sys.label.clone(), a.nnz());
    for i in pinned..a.n {
        for (j, v) in a.row(i) {
            if j >= pinned {
                red.add(i - pinned, j - pinned, v);
            }
        }
    }
    let red = red.with_coords(coords[pinned..].to_vec());
    let r = rhs.iter().map(|b| b[pinned..].to_vec()).collect();
    (red, r)
}

fn unpin<T: crate::linsolve::Scalar>(x: Vec<T>, pinned: usize) -> Vec<T> {
    let mut full = vec![T::default(); pinned];
    full.extend(x);
    full
}

/// Solves the curl cell problems for the given `mu^-1_h` samples.
pub fn solve_curl_cells(mu_inv: &[f64], space: &PeriodicScalarSpace) -> Result<([Vec<f64>; 3], RMat3)> {
    let micro = &*space.mesh;
    let (sys, rhs) = assemble_curl_cell(mu_inv, micro)?;
    let coords: Vec<Vec3> = master_coords(micro).into_iter().flat_map(|c| [c, c, c]).collect();
    let (red, rrhs) = pin(&sys, &rhs, 3, coords);
    drop(sys);
    let sol = Factorization::new(&red)?.solve_many(&rrhs)?;
    let mut v: Vec<Vec<f64>> = sol.into_iter().map(|x| unpin(x, 3)).collect();
    let vol: f64 = space.mean_weights.iter().sum();
    for u in v.iter_mut() {
        for c in 0..3 {
            let mean = space
                .mean_weights
                .iter()
                .enumerate()
                .map(|(m, w)| w * u[3 * m + c])
                .sum::<f64>()
                / vol;
            for m in 0..space.n_dofs() {
                u[3 * m + c] -= mean;
            }
        }
    }
    let v: [Vec<f64>; 3] = v.try_into().expect("three correctors");
    let mhom = curl_tensor(mu_inv, micro, &v);
    Ok((v, mhom))
}

/// Solves the gradient cell problems for the given `kappa_h` samples.
pub fn solve_grad_cells(kappa: &[Complex64], space: &PeriodicScalarSpace) -> Result<([Vec<Complex64>; 3], CMat3)> {
    let micro = &*space.mesh;
    let (sys, rhs) = assemble_grad_cell(kappa, micro)?;
    let (red, rrhs) = pin(&sys, &rhs, 1, master_coords(micro));
    let sol = Factorization::new(&red)?.solve_many(&rrhs)?;
    let mut v: Vec<Vec<Complex64>> = sol.into_iter().map(|x| unpin(x, 1)).collect();
    let vol: f64 = space.mean_weights.iter().sum();
    for u in v.iter_mut() {
        let mean = space.mean(u) / vol;
        u.iter_mut().for_each(|x| *x -= mean);
    }
    let v: [Vec<Complex64>; 3] = v.try_into().expect("three correctors");
    let khom = grad_tensor(kappa, space, &v);
    Ok((v, khom))
}

/// Constant curl of a vector P1 corrector on micro tet `t`.
pub fn corrector_curl(micro: &PeriodicMicroMesh, v: &[f64], t: usize) -> Vec3 {
    let b = vector_p1_curl_rows(&micro.grads[t]);
    let dofs = vector_masters(micro, t);
    let mut out = [0.0; 3];
    for r in 0..3 {
        for a in 0..12 {
            out[r] += b[r][a] * v[dofs[a]];
        }
    }
    out
}

/// Constant divergence of a vector P1 corrector on micro tet `t`.
pub fn corrector_div(micro: &PeriodicMicroMesh, v: &[f64], t: usize) -> f64 {
    let d = vector_p1_div_row(&micro.grads[t]);
    let dofs = vector_masters(micro, t);
    (0..12).map(|a| d[a] * v[dofs[a]]).sum()
}

/// Value of a vector P1 corrector at barycentric coordinates of tet `t`.
pub fn corrector_value(micro: &PeriodicMicroMesh, v: &[f64], t: usize, l: &[f64; 4]) -> Vec3 {
    let m = micro.tet_masters(t);
    let mut out = [0.0; 3];
    for a in 0..4 {
        for c in 0..3 {
            out[c] += l[a] * v[3 * m[a] + c];
        }
    }
    out
}

fn curl_tensor(mu_inv: &[f64], micro: &PeriodicMicroMesh, v: &[Vec<f64>; 3]) -> RMat3 {
    let mut m = [[0.0; 3]; 3];
    for t in 0..micro.n_tets() {
        let w = mu_inv[t] * micro.volumes[t];
        for k in 0..3 {
            let c = corrector_curl(micro, &v[k], t);
            for i in 0..3 {
                m[i][k] += w * (if i == k { 1.0 } else { 0.0 } + c[i]);
            }
        }
    }
    m
}

fn grad_tensor(kappa: &[Complex64], space: &PeriodicScalarSpace, v: &[Vec<Complex64>; 3]) -> CMat3 {
    let micro = &*space.mesh;
    let mut m = [[CZERO; 3]; 3];
    for t in 0..micro.n_tets() {
        let w = kappa[t] * micro.volumes[t];
        for k in 0..3 {
            let g = space.gradient(&v[k], t);
            for i in 0..3 {
                m[i][k] += w * (if i == k { Complex64::from(1.0) } else { CZERO } + g[i]);
            }
        }
    }
    m
}

/// Solves both cell problems for one sample set.
pub fn solve_cell(samples: &CellSamples, space: &PeriodicScalarSpace) -> Result<CellSolution> {
    let (curl, grad) = rayon::join(
        || solve_curl_cells(&samples.mu_inv, space),
        || solve_grad_cells(&samples.kappa, space),
    );
    let (curl_correctors, mhom) = curl?;
    let (grad_correctors, khom) = grad?;
    Ok(CellSolution {
        curl_correctors,
        grad_correctors,
        mhom,
        khom,
    })
}

/// Samples the coefficients and solves the cell problems of every macro
/// element; identical sample sets are solved once.
pub fn homogenize_all(
    macro_mesh: &TetMesh,
    micro: Arc<PeriodicMicroMesh>,
    coeffs: &CoefficientField,
) -> Result<CellCorrectorSet> {
    let samples = Arc::new(SampledCoefficients::sample(coeffs, macro_mesh, &micro));
    let space = Arc::new(PeriodicScalarSpace::new(micro));
    homogenize_sampled(space, samples)
}

pub fn homogenize_sampled(space: Arc<PeriodicScalarSpace>, samples: Arc<SampledCoefficients>) -> Result<CellCorrectorSet> {
    let mut first_element = vec![usize::MAX; samples.sets.len()];
    for (j, &s) in samples.set_of.iter().enumerate().rev() {
        first_element[s] = j;
    }
    let cells = samples
        .sets
        .par_iter()
        .enumerate()
        .map(|(s, set)| {
            solve_cell(set, &space).map_err(|e| Error::Cell {
                element: first_element[s],
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CellCorrectorSet { space, samples, cells })
}

/// `||div v||_{L2(Y)}` of a vector corrector.
pub fn corrector_div_norm(micro: &PeriodicMicroMesh, v: &[f64]) -> f64 {
    (0..micro.n_tets())
        .map(|t| micro.volumes[t] * corrector_div(micro, v, t).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `||v||_{H1(Y)}` of a vector corrector.
pub fn vector_corrector_h1_norm(micro: &PeriodicMicroMesh, v: &[f64]) -> f64 {
    let mut s = 0.0;
    for t in 0..micro.n_tets() {
        let m = micro.tet_masters(t);
        let g = &micro.grads[t];
        let mut grad = [[0.0; 3]; 3];
        let mut vals = [[0.0; 3]; 4];
        for a in 0..4 {
            for c in 0..3 {
                vals[a][c] = v[3 * m[a] + c];
                for d in 0..3 {
                    grad[c][d] += v[3 * m[a] + c] * g[a][d];
                }
            }
        }
        s += micro.volumes[t] * grad.iter().flatten().map(|x| x * x).sum::<f64>();
        s += micro.volumes[t] * p1_mass_sqr(&vals);
    }
    s.sqrt()
}

/// `||v||_{H1(Y)}` of a scalar corrector.
pub fn scalar_corrector_h1_norm(space: &PeriodicScalarSpace, v: &[Complex64]) -> f64 {
    let micro = &*space.mesh;
    let mut s = 0.0;
    for t in 0..micro.n_tets() {
        let g = space.gradient(v, t);
        s += micro.volumes[t] * g.iter().map(|x| x.norm_sqr()).sum::<f64>();
        let m = micro.tet_masters(t);
        let re: Vec<[f64; 3]> = (0..4).map(|a| [v[m[a]].re, v[m[a]].im, 0.0]).collect();
        s += micro.volumes[t] * p1_mass_sqr(&[re[0], re[1], re[2], re[3]]);
    }
    s.sqrt()
}

/// `|T|^-1 int_T |u|^2` for a P1 vector field with vertex values `vals`.
fn p1_mass_sqr(vals: &[[f64; 3]; 4]) -> f64 {
    let mut s = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            let w = if a == b { 0.1 } else { 0.05 };
            s += w * (0..3).map(|c| vals[a][c] * vals[b][c]).sum::<f64>();
        }
    }
    s
}

/// Max-norm residual of the full (unpinned) vector cell system for the
/// corrector `v` of load `k`, relative to the largest load entry.
pub fn curl_cell_residual(mu_inv: &[f64], micro: &PeriodicMicroMesh, v: &[f64], k: usize) -> Result<f64> {
    let (sys, rhs) = assemble_curl_cell(mu_inv, micro)?;
    let a = sys.compress();
    let av = a.matvec(v);
    let scale = rhs.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    Ok(av.iter().zip(&rhs[k]).fold(0.0f64, |m, (x, b)| m.max((x - b).abs())) / scale)
}

/// Max-norm residual of the full scalar cell system.
pub fn grad_cell_residual(kappa: &[Complex64], micro: &PeriodicMicroMesh, v: &[Complex64], k: usize) -> Result<f64> {
    let (sys, rhs) = assemble_grad_cell(kappa, micro)?;
    let a = sys.compress();
    let av = a.matvec(v);
    let scale = rhs.iter().flatten().fold(0.0f64, |m, x| m.max(x.norm())).max(1e-300);
    Ok(av.iter().zip(&rhs[k]).fold(0.0f64, |m, (x, b)| m.max((x - b).norm())) / scale)
}

/// Eigenvalues of a real symmetric 3x3 matrix, ascending.
pub fn sym_eigenvalues(m: &RMat3) -> [f64; 3] {
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        let mut e = [m[0][0], m[1][1], m[2][2]];
        e.sort_by(|a, b| a.total_cmp(b));
        return e;
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    [e3, e2, e1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoefficientParams, LOSS_FACTOR};
    use crate::mesh::{build_box_mesh, build_periodic_cube_mesh, BoxDomain};

    fn space(n: usize) -> PeriodicScalarSpace {
        PeriodicScalarSpace::new(Arc::new(build_periodic_cube_mesh(n).unwrap()))
    }

    fn laminate_samples(micro: &PeriodicMicroMesh, axis: usize) -> CellSamples {
        let lam = CoefficientField::laminate(2.0, 1.0, axis).unwrap();
        CellSamples::at(&lam, [0.5; 3], micro)
    }

    /// Dense Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Vec<Complex64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].norm().total_cmp(&a[j][c].norm())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    let v = a[c][k];
                    a[r][k] -= f * v;
                }
                let v = b[c];
                b[r] -= f * v;
            }
        }
        let mut x = vec![CZERO; n];
        for r in (0..n).rev() {
            let s: Complex64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    /// Dense saddle-point solve with one mean-value multiplier per component.
    fn multiplier_oracle(
        a: &crate::linsolve::CsrMatrix<Complex64>,
        b: &[Complex64],
        weights: &[f64],
        comps: usize,
    ) -> Vec<Complex64> {
        let n = a.n;
        let nt = n + comps;
        let mut m = vec![vec![CZERO; nt]; nt];
        for i in 0..n {
            for (j, v) in a.row(i) {
                m[i][j] = v;
            }
        }
        for (v, &w) in weights.iter().enumerate() {
            for c in 0..comps {
                m[comps * v + c][n + c] = Complex64::from(w);
                m[n + c][comps * v + c] = Complex64::from(w);
            }
        }
        let mut rhs = b.to_vec();
        rhs.extend(std::iter::repeat_n(CZERO, comps));
        let mut x = dense_solve(m, rhs);
        x.truncate(n);
        x
    }

    #[test]
    fn sparse_pinned_path_matches_dense_multiplier_oracle() {
        let sp = space(2);
        let micro = &*sp.mesh;
        let s = laminate_samples(micro, 0);
        // Perturb the samples so that no symmetry makes the problem trivial.
        let mu: Vec<f64> = s.mu_inv.iter().enumerate().map(|(t, v)| v + 0.1 * ((t * 7) % 5) as f64).collect();
        let ka: Vec<Complex64> = s
            .kappa
            .iter()
            .enumerate()
            .map(|(t, v)| v + Complex64::new(0.05 * ((t * 3) % 4) as f64, -0.02 * (t % 3) as f64))
            .collect();

        let (vc, _) = solve_curl_cells(&mu, &sp).unwrap();
        let (sys, rhs) = assemble_curl_cell(&mu, micro).unwrap();
        let a = sys.compress();
        let ac = crate::linsolve::CsrMatrix {
            n: a.n,
            row_ptr: a.row_ptr.clone(),
            col_idx: a.col_idx.clone(),
            values: a.values.iter().map(|&v| Complex64::from(v)).collect(),
        };
        for k in 0..3 {
            let b: Vec<Complex64> = rhs[k].iter().map(|&v| v.into()).collect();
            let x = multiplier_oracle(&ac, &b, &sp.mean_weights, 3);
            let err = x.iter().zip(&vc[k]).fold(0.0f64, |m, (o, s)| m.max((o - s).norm()));
            assert!(err < 1e-10, "vector corrector {k}: {err}");
        }

        let (vg, _) = solve_grad_cells(&ka, &sp).unwrap();
        let (sys, rhs) = assemble_grad_cell(&ka, micro).unwrap();
        let a = sys.compress();
        for k in 0..3 {
            let x = multiplier_oracle(&a, &rhs[k], &sp.mean_weights, 1);
            let err = x.iter().zip(&vg[k]).fold(0.0f64, |m, (o, s)| m.max((o - s).norm()));
            assert!(err < 1e-10, "scalar corrector {k}: {err}");
        }
    }

    #[test]
    fn constant_coefficients_give_zero_correctors() {
        let sp = space(4);
        let c = CoefficientField::constant(1.5, Complex64::new(2.0, -0.5)).unwrap();
        let s = CellSamples::at(&c, [0.0; 3], &sp.mesh);
        let cell = solve_cell(&s, &sp).unwrap();
        for k in 0..3 {
            assert!(vector_corrector_h1_norm(&sp.mesh, &cell.curl_correctors[k]) < 1e-10);
            assert!(scalar_corrector_h1_norm(&sp, &cell.grad_correctors[k]) < 1e-10);
            for i in 0..3 {
                let d = if i == k { 1.0 } else { 0.0 };
                assert!((cell.mhom[i][k] - 1.5 * d).abs() < 1e-12);
                assert!((cell.khom[i][k] - Complex64::new(2.0, -0.5) * d).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn laminate_tensors_approach_closed_form() {
        let s3 = 3f64.sqrt();
        let mut prev = f64::INFINITY;
        for n in [4, 8] {
            let sp = space(n);
            let cell = solve_cell(&laminate_samples(&sp.mesh, 0), &sp).unwrap();
            let mt = [2.0, s3, s3];
            let kt = [LOSS_FACTOR * s3, LOSS_FACTOR * 2.0, LOSS_FACTOR * 2.0];
            let mut err: f64 = 0.0;
            for i in 0..3 {
                err = err.max((cell.mhom[i][i] - mt[i]).abs() / mt[i]);
                err = err.max((cell.khom[i][i] - kt[i]).norm() / kt[i].norm());
            }
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 0.1, "{prev}");
    }

    #[test]
    fn axis_swap_permutes_tensors() {
        let sp = space(4);
        let c0 = solve_cell(&laminate_samples(&sp.mesh, 0), &sp).unwrap();
        let c1 = solve_cell(&laminate_samples(&sp.mesh, 1), &sp).unwrap();
        // Kuhn meshes are symmetric under the swap of the first two axes.
        let p = [1, 0, 2];
        for i in 0..3 {
            for k in 0..3 {
                assert!((c1.mhom[p[i]][p[k]] - c0.mhom[i][k]).abs() < 1e-10);
                assert!((c1.khom[p[i]][p[k]] - c0.khom[i][k]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn tensors_are_symmetric_and_bounded() {
        let sp = space(4);
        let cell = solve_cell(&laminate_samples(&sp.mesh, 2), &sp).unwrap();
        let kmax = cell.khom.iter().flatten().fold(0.0f64, |m, x| m.max(x.norm()));
        for i in 0..3 {
            for k in 0..3 {
                assert!((cell.mhom[i][k] - cell.mhom[k][i]).abs() < 1e-10);
                assert!((cell.khom[i][k] - cell.khom[k][i]).norm() <= 1e-10 * kmax);
            }
        }
        let e = sym_eigenvalues(&cell.mhom);
        assert!(e[0] >= 1.0 * 0.9 && e[2] <= 3.0 * 1.1, "{e:?}");
        let re: RMat3 = std::array::from_fn(|i| std::array::from_fn(|k| cell.khom[i][k].re));
        let im: RMat3 = std::array::from_fn(|i| std::array::from_fn(|k| -cell.khom[i][k].im));
        assert!(sym_eigenvalues(&re)[0] > 0.0 && sym_eigenvalues(&im)[0] > 0.0);
    }

    #[test]
    fn correctors_have_zero_mean_and_satisfy_full_system() {
        let sp = space(4);
        let s = laminate_samples(&sp.mesh, 0);
        let cell = solve_cell(&s, &sp).unwrap();
        for k in 0..3 {
            let v = &cell.curl_correctors[k];
            let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
            for c in 0..3 {
                let mean: f64 = sp.mean_weights.iter().enumerate().map(|(m, w)| w * v[3 * m + c]).sum();
                assert!(mean.abs() < 1e-10 * scale);
            }
            assert!(sp.mean(&cell.grad_correctors[k]).norm() < 1e-10);
            assert!(curl_cell_residual(&s.mu_inv, &sp.mesh, v, k).unwrap() < 1e-10);
            assert!(grad_cell_residual(&s.kappa, &sp.mesh, &cell.grad_correctors[k], k).unwrap() < 1e-10);
        }
    }

    #[test]
    fn divergence_of_correctors_decreases_under_refinement() {
        let mut prev = [f64::INFINITY; 3];
        for n in [4, 8] {
            let sp = space(n);
            let s = laminate_samples(&sp.mesh, 0);
            let (v, _) = solve_curl_cells(&s.mu_inv, &sp).unwrap();
            for k in 0..3 {
                let d = corrector_div_norm(&sp.mesh, &v[k]);
                assert!(d <= prev[k] * 1.1 + 1e-12, "k={k}: {d} vs {}", prev[k]);
                prev[k] = d;
            }
        }
    }

    #[test]
    fn homogenize_all_dedupes_and_scales() {
        let d = BoxDomain::unit_cube();
        let mac = build_box_mesh(d, 2).unwrap();
        let micro = Arc::new(build_periodic_cube_mesh(4).unwrap());
        let lam = CoefficientField::laminate(2.0, 1.0, 0).unwrap();
        let set = homogenize_all(&mac, micro.clone(), &lam).unwrap();
        assert_eq!(set.cells.len(), 1);
        assert_eq!(set.mhom(0), set.mhom(mac.n_tets() - 1));

        let sep = CoefficientField::preset("separable_xy", &CoefficientParams::default(), &d).unwrap();
        let set_s = homogenize_all(&mac, micro, &sep).unwrap();
        assert!(set_s.cells.len() > 1);
        // The vector cell problem scales exactly only in its curl part; the
        // ratio approaches (1 + gamma x1) and stays within a few percent.
        for j in 0..mac.n_tets() {
            let f = 1.0 + 0.5 * mac.barycenters[j][0];
            for i in 0..3 {
                let r = set_s.mhom(j)[i][i] / (f * set.mhom(0)[i][i]);
                assert!((r - 1.0).abs() < 0.05, "j={j} i={i}: {r}");
                let rk = set_s.khom(j)[i][i] / (set.khom(0)[i][i] * f);
                assert!((rk - 1.0).norm() < 1e-12, "scalar problem scales exactly: {rk}");
            }
        }
    }

    #[test]
    fn eigenvalues_of_symmetric_matrix() {
        let m = [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]];
        let e = sym_eigenvalues(&m);
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12 && (e[2] - 5.0).abs() < 1e-12);
    }
}
