//! Macro assembly from homogenized tensors, the macro solve, corrector
//! recombination and evaluation of the composite approximation
//! `E_HMM(x) = E_H(x) + delta K_1(x, x/delta) + grad_y K_2(x, x/delta)`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::cell::{corrector_curl, corrector_value, homogenize_all, CMat3, CellCorrectorSet, RMat3};
use crate::coeffs::{CoefficientField, SourceField};
use crate::error::{Error, Result};
use crate::fespace::{n0_curls, n0_values, EdgeField, EdgeSpace, Mat6};
use crate::geom::{cadd, cscale, CVec3, Vec3, CZERO, CZERO3};
use crate::linsolve::{CsrMatrix, Factorization, SparseSystem, SymmetryTag};
use crate::mesh::{build_box_mesh, build_periodic_cube_mesh, BoxDomain, PeriodicMicroMesh};
use crate::quadrature::tet_rule;

/// Dimension guard of the coupled two-scale system.
pub const COUPLED_LIMIT: usize = 200_000;

/// Per-element data of an edge-element operator
/// `int curl u . C curl v - int (kbar u . v) - |T| u(x_T) . D v(x_T)`.
#[derive(Clone, Copy, Debug)]
pub struct ElementCoefficients {
    pub curl: RMat3,
    pub mass: Complex64,
    /// Correction applied with one-point quadrature at the barycenter.
    pub barycenter: CMat3,
}

impl ElementCoefficients {
    pub fn scalar(mu_inv: f64, kappa: Complex64) -> Self {
        Self {
            curl: diag(mu_inv),
            mass: kappa,
            barycenter: [[CZERO; 3]; 3],
        }
    }

    /// HMM element data: the curl tensor, the Y-mean of `kappa_h`, and the
    /// field tensor minus that mean.
    pub fn homogenized(mhom: &RMat3, khom: &CMat3, kappa_mean: Complex64) -> Self {
        let mut d = *khom;
        for (i, row) in d.iter_mut().enumerate() {
            row[i] -= kappa_mean;
        }
        Self {
            curl: *mhom,
            mass: kappa_mean,
            barycenter: d,
        }
    }
}

fn diag(v: f64) -> RMat3 {
    [[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]]
}

/// Local 6x6 matrix of tet `t`.
pub fn element_matrix(space: &EdgeSpace, t: usize, c: &ElementCoefficients) -> Result<Mat6> {
    let mesh = &space.mesh;
    let vol = mesh.volumes[t];
    if !(vol > 0.0) {
        return Err(Error::DegenerateTet(t));
    }
    let g = &mesh.grads[t];
    let s = &space.signs[t];
    let curls = n0_curls(g, s);
    let mut a = [[CZERO; 6]; 6];
    for p in 0..6 {
        for q in 0..6 {
            let mut v = 0.0;
            for i in 0..3 {
                for k in 0..3 {
                    v += curls[p][i] * c.curl[i][k] * curls[q][k];
                }
            }
            a[p][q] = Complex64::from(vol * v);
        }
    }
    let rule = tet_rule(2).expect("degree-2 rule");
    let mut m = [[0.0; 6]; 6];
    for (l, w) in rule.iter() {
        let phi = n0_values(g, s, l);
        for p in 0..6 {
            for q in 0..6 {
                m[p][q] += w * vol * (phi[p][0] * phi[q][0] + phi[p][1] * phi[q][1] + phi[p][2] * phi[q][2]);
            }
        }
    }
    let phi_c = n0_values(g, s, &[0.25; 4]);
    for p in 0..6 {
        for q in 0..6 {
            let mut corr = CZERO;
            for i in 0..3 {
                for k in 0..3 {
                    corr += c.barycenter[i][k] * (phi_c[p][i] * phi_c[q][k]);
                }
            }
            a[p][q] -= c.mass * m[p][q] + corr * vol;
        }
    }
    Ok(a)
}

/// Load vector `int f . phi` by the degree-4 rule, over free DOFs.
pub fn assemble_load(space: &EdgeSpace, f: &SourceField) -> Vec<Complex64> {
    let mesh = &space.mesh;
    let rule = tet_rule(4).expect("degree-4 rule");
    let locals: Vec<[Complex64; 6]> = (0..mesh.n_tets())
        .into_par_iter()
        .map(|t| {
            let g = &mesh.grads[t];
            let mut b = [CZERO; 6];
            for (l, w) in rule.iter() {
                let x = mesh.point_from_barycentric(t, *l);
                let fx = f.eval(x);
                let phi = n0_values(g, &space.signs[t], l);
                for p in 0..6 {
                    b[p] += (fx[0] * phi[p][0] + fx[1] * phi[p][1] + fx[2] * phi[p][2]) * (w * mesh.volumes[t]);
                }
            }
            b
        })
        .collect();
    let mut rhs = vec![CZERO; space.n_dofs];
    for (t, b) in locals.iter().enumerate() {
        for (p, d) in space.local_dofs(t).iter().enumerate() {
            if let Some(d) = d {
                rhs[*d] += b[p];
            }
        }
    }
    rhs
}

/// Edge midpoints of the free DOFs, used to order the factorization.
pub fn dof_coords(space: &EdgeSpace) -> Vec<Vec3> {
    let mesh = &space.mesh;
    let mut c = vec![[0.0; 3]; space.n_dofs];
    for (e, d) in space.dof_of_edge.iter().enumerate() {
        if let Some(d) = d {
            let [a, b] = mesh.edges[e];
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            c[*d] = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]), 0.5 * (pa[2] + pb[2])];
        }
    }
    c
}

/// Assembles the edge-element system with per-element data `coef(t)`.
pub fn assemble_edge_system<F>(space: &EdgeSpace, label: &str, coef: F) -> Result<SparseSystem<Complex64>>
where
    F: Fn(usize) -> ElementCoefficients + Sync,
{
    let n_tets = space.mesh.n_tets();
    let locals: Vec<Mat6> = (0..n_tets)
        .into_par_iter()
        .map(|t| element_matrix(space, t, &coef(t)))
        .collect::<Result<_>>()?;
    let mut sys = SparseSystem::with_capacity(space.n_dofs, SymmetryTag::ComplexSymmetric, label, 36 * n_tets);
    for (t, a) in locals.iter().enumerate() {
        let dofs = space.local_dofs(t);
        for p in 0..6 {
            let Some(dp) = dofs[p] else { continue };
            for q in 0..6 {
                if let Some(dq) = dofs[q] {
                    sys.add(dp, dq, a[p][q]);
                }
            }
        }
    }
    Ok(sys.with_coords(dof_coords(space)))
}

/// Macro HMM matrix from the homogenized tensors.
pub fn assemble_macro(space: &EdgeSpace, cells: &CellCorrectorSet) -> Result<SparseSystem<Complex64>> {
    if cells.n_elements() != space.mesh.n_tets() {
        return Err(Error::InvalidArgument(format!(
            "tensors for {} elements, macro mesh has {}",
            cells.n_elements(),
            space.mesh.n_tets()
        )));
    }
    let micro = cells.micro();
    let means: Vec<Complex64> = cells
        .samples
        .sets
        .iter()
        .map(|s| s.kappa.iter().zip(&micro.volumes).map(|(k, v)| k * v).sum())
        .collect();
    assemble_edge_system(space, "macro", |t| {
        let c = cells.cell(t);
        ElementCoefficients::homogenized(&c.mhom, &c.khom, means[cells.samples.set_of[t]])
    })
}

/// Single-scale edge-element system with piecewise-constant coefficients.
pub fn assemble_single_scale(space: &EdgeSpace, mu_inv: &[f64], kappa: &[Complex64]) -> Result<SparseSystem<Complex64>> {
    assemble_edge_system(space, "single-scale", |t| ElementCoefficients::scalar(mu_inv[t], kappa[t]))
}

/// Inputs of one HMM run.
#[derive(Clone, Debug)]
pub struct HmmConfig {
    pub domain: BoxDomain,
    pub macro_n: usize,
    pub micro_n: usize,
    pub coeffs: CoefficientField,
    pub source: SourceField,
    pub delta: f64,
}

/// The macro solution with its fine-scale corrections.
#[derive(Clone, Debug)]
pub struct HmmSolution {
    pub space: Arc<EdgeSpace>,
    pub dofs: Vec<Complex64>,
    pub field: EdgeField,
    /// `curl E_H` on each macro element.
    pub curls: Vec<CVec3>,
    /// `E_H` at each macro barycenter.
    pub centers: Vec<CVec3>,
    pub cells: Arc<CellCorrectorSet>,
    pub delta: f64,
    pub coeffs: CoefficientField,
    pub source: SourceField,
    /// Relative residual of the macro solve.
    pub residual: f64,
}

/// Full pipeline: meshes, cell problems, macro assembly and solve.
pub fn solve_hmm(cfg: &HmmConfig) -> Result<HmmSolution> {
    if !(cfg.delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {}", cfg.delta)));
    }
    let macro_mesh = Arc::new(build_box_mesh(cfg.domain, cfg.macro_n).map_err(|e| e.in_stage("mesh"))?);
    let micro = Arc::new(build_periodic_cube_mesh(cfg.micro_n).map_err(|e| e.in_stage("mesh"))?);
    let cells = Arc::new(homogenize_all(&macro_mesh, micro, &cfg.coeffs).map_err(|e| e.in_stage("homogenize"))?);
    let space = Arc::new(EdgeSpace::new(macro_mesh));
    solve_macro(space, cells, cfg.coeffs.clone(), cfg.source.clone(), cfg.delta)
}

/// Assembles and solves the macro problem for given cell solutions.
pub fn solve_macro(
    space: Arc<EdgeSpace>,
    cells: Arc<CellCorrectorSet>,
    coeffs: CoefficientField,
    source: SourceField,
    delta: f64,
) -> Result<HmmSolution> {
    let sys = assemble_macro(&space, &cells).map_err(|e| e.in_stage("assemble"))?;
    let rhs = assemble_load(&space, &source);
    let fact = Factorization::new(&sys).map_err(|e| e.in_stage("solve"))?;
    drop(sys);
    let dofs = fact.solve(&rhs).map_err(|e| e.in_stage("solve"))?;
    let residual = relative_residual(&fact.matrix, &dofs, &rhs);
    drop(fact);
    Ok(HmmSolution::new(space, dofs, cells, coeffs, source, delta, residual))
}

pub fn relative_residual(a: &CsrMatrix<Complex64>, x: &[Complex64], b: &[Complex64]) -> f64 {
    let ax = a.matvec(x);
    let num: f64 = ax.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

impl HmmSolution {
    pub fn new(
        space: Arc<EdgeSpace>,
        dofs: Vec<Complex64>,
        cells: Arc<CellCorrectorSet>,
        coeffs: CoefficientField,
        source: SourceField,
        delta: f64,
        residual: f64,
    ) -> Self {
        let field = EdgeField::from_dofs(space.clone(), &dofs);
        let n = space.mesh.n_tets();
        let curls = (0..n).map(|t| field.curl_in(t)).collect();
        let centers = (0..n).map(|t| field.value_in(t, &[0.25; 4])).collect();
        Self {
            space,
            dofs,
            field,
            curls,
            centers,
            cells,
            delta,
            coeffs,
            source,
            residual,
        }
    }

    pub fn micro(&self) -> &PeriodicMicroMesh {
        self.cells.micro()
    }

    /// `K_{h,1}` on element `j` at micro tet `i`, barycentric point `l`.
    pub fn k1_value(&self, j: usize, i: usize, l: &[f64; 4]) -> CVec3 {
        let cell = self.cells.cell(j);
        let mut out = CZERO3;
        for k in 0..3 {
            let v = corrector_value(self.micro(), &cell.curl_correctors[k], i, l);
            out = cadd(out, cscale(self.curls[j][k], crate::geom::to_complex(v)));
        }
        out
    }

    /// `curl_y K_{h,1}` on element `j`, micro tet `i`.
    pub fn k1_curl(&self, j: usize, i: usize) -> CVec3 {
        let cell = self.cells.cell(j);
        let mut out = CZERO3;
        for k in 0..3 {
            let c = corrector_curl(self.micro(), &cell.curl_correctors[k], i);
            out = cadd(out, cscale(self.curls[j][k], crate::geom::to_complex(c)));
        }
        out
    }

    /// `div_y K_{h,1}` on element `j`, micro tet `i`.
    pub fn k1_div(&self, j: usize, i: usize) -> Complex64 {
        let cell = self.cells.cell(j);
        (0..3)
            .map(|k| self.curls[j][k] * crate::cell::corrector_div(self.micro(), &cell.curl_correctors[k], i))
            .sum()
    }

    /// `grad_y K_{h,2}` on element `j`, micro tet `i`.
    pub fn k2_grad(&self, j: usize, i: usize) -> CVec3 {
        let cell = self.cells.cell(j);
        let mut out = CZERO3;
        for k in 0..3 {
            let g = self.cells.space.gradient(&cell.grad_correctors[k], i);
            out = cadd(out, cscale(self.centers[j][k], g));
        }
        out
    }

    /// Value of `E_HMM` and the composite curl
    /// `curl E_H + curl_y K_{h,1}(x, x/delta)` at `x`.
    pub fn evaluate_ehmm(&self, x: Vec3) -> Result<(CVec3, CVec3)> {
        let (j, l) = self.space.mesh.locate(x)?;
        let d = self.delta;
        let y = PeriodicMicroMesh::wrap([x[0] / d, x[1] / d, x[2] / d]);
        let (i, ly) = self.micro().locate_periodic(y);
        let eh = self.field.value_in(j, &l);
        let v = cadd(cadd(eh, cscale(Complex64::from(d), self.k1_value(j, i, &ly))), self.k2_grad(j, i));
        let c = cadd(self.curls[j], self.k1_curl(j, i));
        Ok((v, c))
    }

    /// Macro field `E_H` and its curl at `x`.
    pub fn evaluate_macro(&self, x: Vec3) -> Result<(CVec3, CVec3)> {
        self.field.evaluate(x)
    }

    /// Max-norm Galerkin residual of the recombined correctors of element
    /// `j`, relative to the load scale.
    pub fn corrector_residual(&self, j: usize) -> Result<f64> {
        let micro = self.micro();
        let s = self.cells.sample(j);
        let cell = self.cells.cell(j);
        let (sys, loads) = crate::cell::assemble_curl_cell(&s.mu_inv, micro)?;
        let a = sys.compress();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        let c = self.curls[j];
        let n = a.n;
        let mut rhs = vec![CZERO; n];
        let mut k1 = vec![CZERO; n];
        for k in 0..3 {
            for r in 0..n {
                rhs[r] += c[k] * loads[k][r];
                k1[r] += c[k] * cell.curl_correctors[k][r];
            }
        }
        for r in 0..n {
            let av: Complex64 = a.row(r).map(|(q, v)| k1[q] * v).sum();
            worst = worst.max((av - rhs[r]).norm());
            let load = loads.iter().fold(0.0f64, |m, l| m.max(l[r].abs()));
            scale = scale.max(load * (c[0].norm() + c[1].norm() + c[2].norm()));
        }
        Ok(if scale == 0.0 { worst } else { worst / scale })
    }
}

/// The coupled discrete two-scale system: macro edge DOFs, then per element
/// the vector corrector block (with three mean multipliers) and the scalar
/// corrector block (with one mean multiplier).
pub struct CoupledSystem {
    pub system: SparseSystem<Complex64>,
    pub rhs: Vec<Complex64>,
    pub n_macro: usize,
    /// Size of one element's corrector block.
    pub block: usize,
}

/// Assembles the coupled two-scale system (small meshes only).
pub fn assemble_coupled_two_scale(
    space: &EdgeSpace,
    cells: &CellCorrectorSet,
    source: &SourceField,
) -> Result<CoupledSystem> {
    let mesh = &space.mesh;
    let micro = cells.micro();
    let nm = micro.n_masters();
    let nv = 3 * nm + 3;
    let block = nv + nm + 1;
    let n_macro = space.n_dofs;
    let dim = n_macro + mesh.n_tets() * block;
    if dim > COUPLED_LIMIT {
        return Err(Error::TooLarge { dim, limit: COUPLED_LIMIT });
    }
    let mut sys = SparseSystem::new(dim, SymmetryTag::SymmetricIndefinite, "coupled two-scale");
    let weights = &cells.space.mean_weights;
    let rule = tet_rule(2).expect("degree-2 rule");
    let c = |v: f64| Complex64::from(v);
    for j in 0..mesh.n_tets() {
        let vol = mesh.volumes[j];
        let s = cells.sample(j);
        let g = &mesh.grads[j];
        let signs = &space.signs[j];
        let curls = n0_curls(g, signs);
        let phi_c = n0_values(g, signs, &[0.25; 4]);
        let dofs = space.local_dofs(j);
        let base = n_macro + j * block;
        let mu_mean: f64 = s.mu_inv.iter().zip(&micro.volumes).map(|(m, v)| m * v).sum();
        let k_mean: Complex64 = s.kappa.iter().zip(&micro.volumes).map(|(k, v)| k * v).sum();
        let mut mass = [[0.0; 6]; 6];
        for (l, w) in rule.iter() {
            let phi = n0_values(g, signs, l);
            for p in 0..6 {
                for q in 0..6 {
                    mass[p][q] += w * vol * crate::geom::dot(phi[p], phi[q]);
                }
            }
        }
        for p in 0..6 {
            let Some(dp) = dofs[p] else { continue };
            for q in 0..6 {
                if let Some(dq) = dofs[q] {
                    let cc = vol * mu_mean * crate::geom::dot(curls[p], curls[q]);
                    sys.add(dp, dq, c(cc) - k_mean * mass[p][q]);
                }
            }
        }
        for i in 0..micro.n_tets() {
            let vi = micro.volumes[i];
            let gy = &micro.grads[i];
            let m = micro.tet_masters(i);
            let b = crate::fespace::vector_p1_curl_rows(gy);
            let dv = crate::fespace::vector_p1_div_row(gy);
            let mu = s.mu_inv[i];
            let ka = s.kappa[i];
            let vdof = |a: usize| base + 3 * m[a / 3] + a % 3;
            for a in 0..12 {
                for bb in 0..12 {
                    let mut cc = 0.0;
                    for r in 0..3 {
                        cc += b[r][a] * b[r][bb];
                    }
                    sys.add(vdof(a), vdof(bb), c(vol * vi * (mu * cc + dv[a] * dv[bb])));
                }
                // Macro curl against micro curl.
                for p in 0..6 {
                    if let Some(dp) = dofs[p] {
                        let mut v = 0.0;
                        for r in 0..3 {
                            v += curls[p][r] * b[r][a];
                        }
                        let e = c(vol * vi * mu * v);
                        sys.add(dp, vdof(a), e);
                        sys.add(vdof(a), dp, e);
                    }
                }
            }
            let sdof = |a: usize| base + nv + m[a];
            for a in 0..4 {
                for bb in 0..4 {
                    let v = crate::geom::dot(gy[a], gy[bb]);
                    sys.add(sdof(a), sdof(bb), -ka * (vol * vi * v));
                }
                for p in 0..6 {
                    if let Some(dp) = dofs[p] {
                        let e = -ka * (vol * vi * crate::geom::dot(phi_c[p], gy[a]));
                        sys.add(dp, sdof(a), e);
                        sys.add(sdof(a), dp, e);
                    }
                }
            }
        }
        for (v, &w) in weights.iter().enumerate() {
            for comp in 0..3 {
                let e = c(vol * w);
                sys.add(base + 3 * v + comp, base + 3 * nm + comp, e);
                sys.add(base + 3 * nm + comp, base + 3 * v + comp, e);
            }
            let e = c(vol * w);
            sys.add(base + nv + v, base + nv + nm, e);
            sys.add(base + nv + nm, base + nv + v, e);
        }
    }
    let mut rhs = assemble_load(space, source);
    rhs.resize(dim, CZERO);
    Ok(CoupledSystem {
        system: sys,
        rhs,
        n_macro,
        block,
    })
}

impl CoupledSystem {
    /// Dense Schur complement onto the macro DOFs, eliminating each element's
    /// corrector block separately.
    pub fn schur_complement(&self) -> Result<Vec<Vec<Complex64>>> {
        let a = self.system.compress();
        let nh = self.n_macro;
        let n_el = (a.n - nh) / self.block;
        let mut s = vec![vec![CZERO; nh]; nh];
        for i in 0..nh {
            for (j, v) in a.row(i) {
                if j < nh {
                    s[i][j] += v;
                }
            }
        }
        for e in 0..n_el {
            let base = nh + e * self.block;
            let range = base..base + self.block;
            let mut blk = SparseSystem::new(self.block, SymmetryTag::SymmetricIndefinite, "corrector block");
            // Coupling columns B (block rows x macro columns).
            let mut coupled: Vec<usize> = Vec::new();
            let mut bcols: std::collections::BTreeMap<usize, Vec<Complex64>> = Default::default();
            for r in range.clone() {
                for (q, v) in a.row(r) {
                    if range.contains(&q) {
                        blk.add(r - base, q - base, v);
                    } else if q < nh {
                        bcols.entry(q).or_insert_with(|| vec![CZERO; self.block])[r - base] += v;
                    }
                }
            }
            coupled.extend(bcols.keys().copied());
            let cols: Vec<Vec<Complex64>> = bcols.values().cloned().collect();
            let x = Factorization::new(&blk)?.solve_many(&cols)?;
            for (ci, &p) in coupled.iter().enumerate() {
                for (cj, &q) in coupled.iter().enumerate() {
                    let v: Complex64 = cols[ci].iter().zip(&x[cj]).map(|(u, w)| u * w).sum();
                    s[p][q] -= v;
                }
            }
        }
        Ok(s)
    }

    /// Solves the coupled system; returns the macro part.
    pub fn solve_macro_part(&self) -> Result<Vec<Complex64>> {
        let x = Factorization::new(&self.system)?.solve(&self.rhs)?;
        Ok(x[..self.n_macro].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::homogenize_all;
    use crate::coeffs::LOSS_FACTOR;
    use crate::fespace::n0_local_matrices;

    fn setup(macro_n: usize, micro_n: usize, coeffs: &CoefficientField) -> (Arc<EdgeSpace>, Arc<CellCorrectorSet>) {
        let mac = Arc::new(build_box_mesh(BoxDomain::unit_cube(), macro_n).unwrap());
        let micro = Arc::new(build_periodic_cube_mesh(micro_n).unwrap());
        let cells = Arc::new(homogenize_all(&mac, micro, coeffs).unwrap());
        (Arc::new(EdgeSpace::new(mac)), cells)
    }

    #[test]
    fn element_matrix_matches_fespace_blocks() {
        let (space, _) = setup(1, 2, &CoefficientField::constant(1.0, LOSS_FACTOR).unwrap());
        let c = ElementCoefficients::homogenized(&diag(1.0), &std::array::from_fn(|i| {
            std::array::from_fn(|k| if i == k { LOSS_FACTOR } else { CZERO })
        }), LOSS_FACTOR);
        for t in 0..space.mesh.n_tets() {
            let a = element_matrix(&space, t, &c).unwrap();
            let (cc, m) = n0_local_matrices(&space.mesh, t, &space.signs[t], Complex64::from(1.0)).unwrap();
            for p in 0..6 {
                for q in 0..6 {
                    let expect = cc[p][q] - LOSS_FACTOR * m[p][q];
                    assert!((a[p][q] - expect).norm() < 1e-12, "{t} {p} {q}");
                }
            }
        }
    }

    #[test]
    fn constant_preset_reproduces_single_scale_system() {
        let k0 = Complex64::new(1.0, -1.0);
        let coeffs = CoefficientField::constant(1.3, k0).unwrap();
        let (space, cells) = setup(3, 2, &coeffs);
        let a = assemble_macro(&space, &cells).unwrap().compress();
        let n = space.mesh.n_tets();
        let b = assemble_single_scale(&space, &vec![1.3; n], &vec![k0; n]).unwrap().compress();
        assert_eq!(a.col_idx, b.col_idx);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).norm() < 1e-12);
        }
        assert!(a.asymmetry() <= 1e-12 * a.max_abs());
    }

    #[test]
    fn solution_is_linear_in_the_source() {
        let coeffs = CoefficientField::laminate(2.0, 1.0, 0).unwrap();
        let (space, cells) = setup(3, 4, &coeffs);
        let f = SourceField::Constant([Complex64::from(1.0), CZERO, CZERO]);
        let s1 = solve_macro(space.clone(), cells.clone(), coeffs.clone(), f.clone(), 0.1).unwrap();
        let s2 = solve_macro(space, cells, coeffs, f.scaled(2.0), 0.1).unwrap();
        assert!(s1.residual <= 1e-10);
        for (a, b) in s1.dofs.iter().zip(&s2.dofs) {
            assert!((b - 2.0 * a).norm() <= 1e-12 * (1.0 + a.norm()));
        }
        let zero = solve_macro(s1.space.clone(), s1.cells.clone(), s1.coeffs.clone(), f.scaled(0.0), 0.1).unwrap();
        assert!(zero.dofs.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn stored_curls_match_affine_representation() {
        let coeffs = CoefficientField::laminate(2.0, 1.0, 0).unwrap();
        let (space, cells) = setup(2, 2, &coeffs);
        let f = SourceField::SinE1 { amp: Complex64::from(1.0) };
        let sol = solve_macro(space, cells, coeffs, f, 0.25).unwrap();
        for t in 0..sol.space.mesh.n_tets() {
            // E = a x X + b on the tet: recover a from values at two points.
            let p = sol.space.mesh.tet_points(t);
            let e0 = sol.field.value_in(t, &[1.0, 0.0, 0.0, 0.0]);
            let mut rows = Vec::new();
            for v in 1..4 {
                let mut l = [0.0; 4];
                l[v] = 1.0;
                let ev = sol.field.value_in(t, &l);
                rows.push((crate::geom::sub(p[v], p[0]), crate::geom::csub(ev, e0)));
            }
            // For E = a x X + b, dE = a x dX; solve for a with the first
            // component of each difference via the Jacobian J = [a]_x.
            let d: [Vec3; 3] = [rows[0].0, rows[1].0, rows[2].0];
            let (inv, _) = crate::geom::inverse3([d[0], d[1], d[2]]);
            // Gradient matrix G with G d_i = dE_i, so G = dE D^-T.
            let mut gm = [[CZERO; 3]; 3];
            for r in 0..3 {
                for cidx in 0..3 {
                    for i in 0..3 {
                        gm[r][cidx] += rows[i].1[r] * inv[cidx][i];
                    }
                }
            }
            let curl = [gm[2][1] - gm[1][2], gm[0][2] - gm[2][0], gm[1][0] - gm[0][1]];
            for k in 0..3 {
                assert!((curl[k] - sol.curls[t][k]).norm() < 1e-10 * (1.0 + sol.curls[t][k].norm()));
            }
        }
    }

    #[test]
    fn composite_evaluation() {
        let coeffs = CoefficientField::laminate(2.0, 1.0, 0).unwrap();
        let (space, cells) = setup(2, 4, &coeffs);
        let f = SourceField::Constant([Complex64::from(1.0), Complex64::from(0.5), CZERO]);
        let delta = 1.0 / 64.0;
        let sol = solve_macro(space, cells, coeffs, f, delta).unwrap();
        // Periodicity: shifting by delta e1 inside one macro tet changes only
        // the macro part.
        let x = [0.3, 0.21, 0.13];
        let x2 = [x[0] + delta, x[1], x[2]];
        let (j1, _) = sol.space.mesh.locate(x).unwrap();
        let (j2, _) = sol.space.mesh.locate(x2).unwrap();
        assert_eq!(j1, j2);
        let (v1, _) = sol.evaluate_ehmm(x).unwrap();
        let (v2, _) = sol.evaluate_ehmm(x2).unwrap();
        let (m1, _) = sol.evaluate_macro(x).unwrap();
        let (m2, _) = sol.evaluate_macro(x2).unwrap();
        for k in 0..3 {
            assert!(((v2[k] - v1[k]) - (m2[k] - m1[k])).norm() < 1e-12);
        }
        // Finite-difference curl inside one micro and one macro tet.
        let h = 1e-7 * delta;
        let (_, c) = sol.evaluate_ehmm(x).unwrap();
        let ev = |p: Vec3| sol.evaluate_ehmm(p).unwrap().0;
        let mut grad = [[CZERO; 3]; 3];
        for d in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[d] += h;
            xm[d] -= h;
            let (a, b) = (ev(xp), ev(xm));
            for r in 0..3 {
                grad[r][d] = (a[r] - b[r]) / (2.0 * h);
            }
        }
        let fd = [grad[2][1] - grad[1][2], grad[0][2] - grad[2][0], grad[1][0] - grad[0][1]];
        for k in 0..3 {
            assert!((fd[k] - c[k]).norm() < 1e-5 * (1.0 + c[k].norm()), "{k}: {} vs {}", fd[k], c[k]);
        }
    }

    #[test]
    fn coupled_schur_complement_matches_macro_matrix() {
        let coeffs = CoefficientField::laminate(2.0, 1.0, 0).unwrap();
        let (space, cells) = setup(2, 2, &coeffs);
        let f = SourceField::SinE1 { amp: Complex64::from(1.0) };
        let coupled = assemble_coupled_two_scale(&space, &cells, &f).unwrap();
        let s = coupled.schur_complement().unwrap();
        let a = assemble_macro(&space, &cells).unwrap().compress();
        let mut worst: f64 = 0.0;
        for i in 0..a.n {
            for j in 0..a.n {
                worst = worst.max((s[i][j] - a.get(i, j)).norm());
            }
        }
        assert!(worst < 1e-10, "{worst}");
        let x = coupled.solve_macro_part().unwrap();
        let sol = solve_macro(space, cells, coeffs, f, 0.5).unwrap();
        let err = x.iter().zip(&sol.dofs).fold(0.0f64, |m, (p, q)| m.max((p - q).norm()));
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn coupled_guard() {
        let coeffs = CoefficientField::laminate(2.0, 1.0, 0).unwrap();
        let (space, cells) = setup(4, 8, &coeffs);
        let f = SourceField::SinE1 { amp: Complex64::from(1.0) };
        assert!(matches!(
            assemble_coupled_two_scale(&space, &cells, &f),
            Err(Error::TooLarge { .. })
        ));
    }
}
