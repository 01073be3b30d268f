//! Residual a posteriori indicators for the HMM solution.
//!
//! Per macro element `j` the table holds the element residuals, the data
//! term `zeta_j`, and the sums over micro faces and micro cells of the
//! squared micro indicators. Single micro entries are available through
//! [`micro_face_indicators`] and [`zeta_micro`]. The micro sums are exact:
//! on a macro element every micro jump is linear in the corrector
//! coefficients, so the sums reduce to small Gram matrices per sample set.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::cell::{corrector_curl, corrector_div, CMat3, RMat3};
use crate::error::{Error, Result};
use crate::geom::{cnorm_sqr, cross, CVec3, Vec3, CZERO, CZERO3};
use crate::hmm::HmmSolution;
use crate::mesh::Face;
use crate::quadrature::{tet_rule, triangle_rule_degree2};

type C6 = [Complex64; 6];
type CMat6 = [[Complex64; 6]; 6];

/// Micro data of one sample set.
struct SetData {
    /// `curl_y V_k` on micro tet `i`, column `k`.
    curl: Vec<RMat3>,
    div: Vec<[f64; 3]>,
    /// `grad_y v_k` on micro tet `i`, column `k`.
    grad: Vec<CMat3>,
    mu: Vec<f64>,
    kappa: Vec<Complex64>,
    /// `int_Y mu_h (I + curl_y V)`.
    curl_flux: RMat3,
    kappa_mean: Complex64,
    /// `int_Y kappa_h grad_y v`.
    grad_flux: CMat3,
    /// Gram of the micro curl-flux jumps.
    q1: RMat3,
    /// Gram of the micro normal-flux jumps in `(E_H(x), k2)`.
    q2: CMat6,
}

fn set_data(sol: &HmmSolution, s: usize) -> SetData {
    let micro = sol.micro();
    let cell = &sol.cells.cells[s];
    let samples = &sol.cells.samples.sets[s];
    let nt = micro.n_tets();
    let mut curl = Vec::with_capacity(nt);
    let mut div = Vec::with_capacity(nt);
    let mut grad = Vec::with_capacity(nt);
    for i in 0..nt {
        let c: [Vec3; 3] = std::array::from_fn(|k| corrector_curl(micro, &cell.curl_correctors[k], i));
        let g: [CVec3; 3] = std::array::from_fn(|k| sol.cells.space.gradient(&cell.grad_correctors[k], i));
        curl.push(std::array::from_fn(|r| std::array::from_fn(|k| c[k][r])));
        div.push(std::array::from_fn(|k| corrector_div(micro, &cell.curl_correctors[k], i)));
        grad.push(std::array::from_fn(|r| std::array::from_fn(|k| g[k][r])));
    }
    let mut curl_flux = [[0.0; 3]; 3];
    let mut grad_flux = [[CZERO; 3]; 3];
    let mut kappa_mean = CZERO;
    for i in 0..nt {
        let w = micro.volumes[i];
        kappa_mean += samples.kappa[i] * w;
        for r in 0..3 {
            for k in 0..3 {
                let id = if r == k { 1.0 } else { 0.0 };
                curl_flux[r][k] += w * samples.mu_inv[i] * (id + curl[i][r][k]);
                grad_flux[r][k] += samples.kappa[i] * grad[i][r][k] * w;
            }
        }
    }
    let mut d = SetData {
        curl,
        div,
        grad,
        mu: samples.mu_inv.clone(),
        kappa: samples.kappa.clone(),
        curl_flux,
        kappa_mean,
        grad_flux,
        q1: [[0.0; 3]; 3],
        q2: [[CZERO; 6]; 6],
    };
    for f in micro.faces.iter() {
        let Some((nb, _)) = f.neighbor else { continue };
        let w = f.diameter * f.area;
        let j1 = d.curl_jump(f.owner, nb, f.normal);
        let j2 = d.normal_jump(f.owner, nb, f.normal);
        for p in 0..3 {
            for q in 0..3 {
                d.q1[p][q] += w * (0..3).map(|r| j1[r][p] * j1[r][q]).sum::<f64>();
            }
        }
        for p in 0..6 {
            for q in 0..6 {
                d.q2[p][q] += j2[p].conj() * j2[q] * w;
            }
        }
    }
    d
}

impl SetData {
    /// Matrix mapping the curl coefficients `c` to
    /// `mu_h (c + curl_y V c) x n + (div_y V c) n` on micro tet `i`.
    fn curl_flux_map(&self, i: usize, n: Vec3) -> RMat3 {
        let mut a = [[0.0; 3]; 3];
        for k in 0..3 {
            let mut col = [self.curl[i][0][k], self.curl[i][1][k], self.curl[i][2][k]];
            col[k] += 1.0;
            let t = cross(col, n);
            for r in 0..3 {
                a[r][k] = self.mu[i] * t[r] + self.div[i][k] * n[r];
            }
        }
        a
    }

    fn curl_jump(&self, a: usize, b: usize, n: Vec3) -> RMat3 {
        let (p, q) = (self.curl_flux_map(a, n), self.curl_flux_map(b, n));
        std::array::from_fn(|r| std::array::from_fn(|k| p[r][k] - q[r][k]))
    }

    /// Row mapping `(E, k2)` to `kappa_h (E + grad_y v k2) . n` on tet `i`.
    fn normal_flux_row(&self, i: usize, n: Vec3) -> C6 {
        let mut row = [CZERO; 6];
        for k in 0..3 {
            row[k] = self.kappa[i] * n[k];
            let ng: Complex64 = (0..3).map(|r| self.grad[i][r][k] * n[r]).sum();
            row[3 + k] = self.kappa[i] * ng;
        }
        row
    }

    fn normal_jump(&self, a: usize, b: usize, n: Vec3) -> C6 {
        let (p, q) = (self.normal_flux_row(a, n), self.normal_flux_row(b, n));
        std::array::from_fn(|k| p[k] - q[k])
    }

    fn mean_curl_flux(&self, c: CVec3) -> CVec3 {
        std::array::from_fn(|r| (0..3).map(|k| c[k] * self.curl_flux[r][k]).sum())
    }

    /// `int_Y kappa_h (E + grad_y v k2)`.
    fn mean_field_flux(&self, e: CVec3, k2: CVec3) -> CVec3 {
        std::array::from_fn(|r| e[r] * self.kappa_mean + (0..3).map(|k| self.grad_flux[r][k] * k2[k]).sum::<Complex64>())
    }
}

fn matvec_r(m: &RMat3, v: CVec3) -> CVec3 {
    std::array::from_fn(|r| (0..3).map(|k| v[k] * m[r][k]).sum())
}

fn matvec_c(m: &CMat3, v: CVec3) -> CVec3 {
    std::array::from_fn(|r| (0..3).map(|k| m[r][k] * v[k]).sum())
}

fn hform6(m: &CMat6, g: &C6) -> f64 {
    let mut s = CZERO;
    for p in 0..6 {
        for q in 0..6 {
            s += g[p].conj() * m[p][q] * g[q];
        }
    }
    s.re.max(0.0)
}

fn cross_c(a: CVec3, n: Vec3) -> CVec3 {
    [a[1] * n[2] - a[2] * n[1], a[2] * n[0] - a[0] * n[2], a[0] * n[1] - a[1] * n[0]]
}

/// One interior macro face with its two jump indicators.
#[derive(Clone, Debug, Serialize)]
pub struct FaceIndicator {
    pub face: usize,
    pub owner: usize,
    pub neighbor: usize,
    pub eta: [f64; 2],
}

/// The five root-sum-of-squares groups of the estimate.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Aggregates {
    /// `(sum eta_{j,1}^2 + eta_{j,2}^2)^(1/2)`.
    pub element: f64,
    pub face: f64,
    pub micro: f64,
    pub zeta: f64,
    pub zeta_micro: f64,
}

impl Aggregates {
    /// Sum of the three residual groups.
    pub fn eta_total(&self) -> f64 {
        self.element + self.face + self.micro
    }

    pub fn zeta_total(&self) -> f64 {
        self.zeta + self.zeta_micro
    }
}

#[derive(Clone, Debug)]
pub struct IndicatorTable {
    /// `[eta_{j,1}, eta_{j,2}]`.
    pub element: Vec<[f64; 2]>,
    pub zeta: Vec<f64>,
    pub faces: Vec<FaceIndicator>,
    /// `[sum_ik eta_{j,ik,1}^2, sum_ik eta_{j,ik,2}^2]`.
    pub micro_sq: Vec<[f64; 2]>,
    /// `sum_i zeta_{ji}^2`.
    pub zeta_micro_sq: Vec<f64>,
    pub aggregates: Aggregates,
    pub fh_degree: usize,
}

/// Effectivity of the residual groups against a reference error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Effectivity {
    Value(f64),
    /// The error vanishes to rounding, so the ratio is not defined.
    Undefined,
}

impl Effectivity {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Value(v) => Some(*v),
            Self::Undefined => None,
        }
    }
}

/// Largest local efficiency ratios of each indicator kind.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct LocalEfficiency {
    pub element: f64,
    pub divergence: f64,
    pub face: f64,
    pub micro: f64,
}

impl LocalEfficiency {
    pub fn max(&self) -> f64 {
        self.element.max(self.divergence).max(self.face).max(self.micro)
    }
}

/// Piecewise polynomial `f_H` on one element: value at barycentric `l`.
#[derive(Clone, Copy, Debug)]
struct LocalSource {
    nodal: [CVec3; 4],
}

impl LocalSource {
    fn at(&self, l: &[f64; 4]) -> CVec3 {
        std::array::from_fn(|c| (0..4).map(|a| self.nodal[a][c] * l[a]).sum())
    }
}

/// Elementwise L2 projection of the source onto polynomials of `degree`.
fn project_source(sol: &HmmSolution, t: usize, degree: usize) -> LocalSource {
    let mesh = &sol.space.mesh;
    let rule = tet_rule(4).expect("degree-4 rule");
    let vol = mesh.volumes[t];
    let mut moments = [CZERO3; 4];
    let mut mean = CZERO3;
    for (l, w) in rule.iter() {
        let f = sol.source.eval(mesh.point_from_barycentric(t, *l));
        for c in 0..3 {
            mean[c] += f[c] * w;
            for a in 0..4 {
                moments[a][c] += f[c] * (w * vol * l[a]);
            }
        }
    }
    if degree == 0 {
        return LocalSource { nodal: [mean; 4] };
    }
    // Inverse P1 mass matrix: (20 / |T|) (I - 11^T / 5).
    let mut nodal = [CZERO3; 4];
    for c in 0..3 {
        let s: Complex64 = (0..4).map(|a| moments[a][c]).sum();
        for a in 0..4 {
            nodal[a][c] = (moments[a][c] - s / 5.0) * (20.0 / vol);
        }
    }
    LocalSource { nodal }
}

/// `int_Y kappa_h (E_H + grad_y K_{h,2}) dy` on element `j` at `l`.
fn field_flux(sol: &HmmSolution, d: &SetData, j: usize, l: &[f64; 4]) -> CVec3 {
    d.mean_field_flux(sol.field.value_in(j, l), sol.centers[j])
}

/// The two jump indicators of interior macro face `face`, with the jump
/// taken as `first - second`.
fn face_jumps(sol: &HmmSolution, data: &[SetData], f: &Face, first: usize, second: usize) -> [f64; 2] {
    let mesh = &sol.space.mesh;
    let so = &sol.cells.samples.set_of;
    let (da, db) = (&data[so[first]], &data[so[second]]);
    let n = f.normal;
    let curl_jump: CVec3 = {
        let a = da.mean_curl_flux(sol.curls[first]);
        let b = db.mean_curl_flux(sol.curls[second]);
        cross_c(std::array::from_fn(|r| a[r] - b[r]), n)
    };
    let eta1 = (f.diameter * f.area * cnorm_sqr(curl_jump)).sqrt();
    let (pts, wts) = triangle_rule_degree2();
    let xs = f.vertices.map(|v| mesh.vertices[v]);
    let mut s = 0.0;
    for (p, w) in pts.iter().zip(wts) {
        let x: Vec3 = std::array::from_fn(|c| p[0] * xs[0][c] + p[1] * xs[1][c] + p[2] * xs[2][c]);
        let fa = field_flux(sol, da, first, &mesh.barycentric(first, x));
        let fb = field_flux(sol, db, second, &mesh.barycentric(second, x));
        let jump: Complex64 = (0..3).map(|c| (fa[c] - fb[c]) * n[c]).sum();
        s += w * f.area * jump.norm_sqr();
    }
    [eta1, (f.diameter * s).sqrt()]
}

/// `[eta_{jl,1}, eta_{jl,2}]` for macro face `face` between `first` and
/// `second`; the value does not depend on their order.
pub fn face_indicators(sol: &HmmSolution, face: usize, first: usize, second: usize) -> [f64; 2] {
    let so = &sol.cells.samples.set_of;
    let mut sets = vec![so[first], so[second]];
    sets.dedup();
    let mut data: Vec<Option<SetData>> = (0..sol.cells.cells.len()).map(|_| None).collect();
    for s in sets {
        data[s] = Some(set_data(sol, s));
    }
    let data: Vec<SetData> = data.into_iter().map(|d| d.unwrap_or_else(empty_set)).collect();
    face_jumps(sol, &data, &sol.space.mesh.faces[face], first, second)
}

fn empty_set() -> SetData {
    SetData {
        curl: vec![],
        div: vec![],
        grad: vec![],
        mu: vec![],
        kappa: vec![],
        curl_flux: [[0.0; 3]; 3],
        kappa_mean: CZERO,
        grad_flux: [[CZERO; 3]; 3],
        q1: [[0.0; 3]; 3],
        q2: [[CZERO; 6]; 6],
    }
}

/// `[eta_{j,ik,1}, eta_{j,ik,2}]` for micro face `face` on macro element
/// `j`; `flip` exchanges the two sides of the jump.
pub fn micro_face_indicators(sol: &HmmSolution, j: usize, face: usize, flip: bool) -> [f64; 2] {
    let d = set_data(sol, sol.cells.samples.set_of[j]);
    let f = &sol.micro().faces[face];
    let Some((nb, _)) = f.neighbor else { return [0.0; 2] };
    let (a, b) = if flip { (nb, f.owner) } else { (f.owner, nb) };
    let mesh = &sol.space.mesh;
    let vol = mesh.volumes[j];
    let j1 = matvec_r(&d.curl_jump(a, b, f.normal), sol.curls[j]);
    let eta1 = (f.diameter * f.area * vol * cnorm_sqr(j1)).sqrt();
    let row = d.normal_jump(a, b, f.normal);
    let rule = tet_rule(2).expect("degree-2 rule");
    let mut s = 0.0;
    for (l, w) in rule.iter() {
        let e = sol.field.value_in(j, l);
        let k2 = sol.centers[j];
        let v: Complex64 = (0..3).map(|k| row[k] * e[k] + row[3 + k] * k2[k]).sum();
        s += w * vol * v.norm_sqr();
    }
    [eta1, (f.diameter * f.area * s).sqrt()]
}

/// Per micro tet: `int_{S_i} (mu_h - mu)^2` and `int_{S_i} |kappa_h - kappa|^2`
/// at the macro point `x`, by the degree-2 rule.
fn sampling_weights(sol: &HmmSolution, d: &SetData, x: Vec3) -> (Vec<f64>, Vec<f64>) {
    let micro = sol.micro();
    let rule = tet_rule(2).expect("degree-2 rule");
    let mut mw = vec![0.0; micro.n_tets()];
    let mut kw = vec![0.0; micro.n_tets()];
    for i in 0..micro.n_tets() {
        for (l, w) in rule.iter() {
            let y = micro.point_from_barycentric(i, *l);
            let wv = w * micro.volumes[i];
            mw[i] += wv * (d.mu[i] - sol.coeffs.mu_inv(x, y)).powi(2);
            kw[i] += wv * (d.kappa[i] - sol.coeffs.kappa(x, y)).norm_sqr();
        }
    }
    (mw, kw)
}

/// `zeta_{ji}` for macro element `j` and micro tet `i`.
pub fn zeta_micro(sol: &HmmSolution, j: usize, i: usize) -> f64 {
    let d = set_data(sol, sol.cells.samples.set_of[j]);
    let mesh = &sol.space.mesh;
    let rule = tet_rule(2).expect("degree-2 rule");
    let c = sol.curls[j];
    let v: CVec3 = std::array::from_fn(|r| c[r] + matvec_r(&d.curl[i], c)[r]);
    let g = matvec_c(&d.grad[i], sol.centers[j]);
    let (mut a, mut b) = (0.0, 0.0);
    for (l, w) in rule.iter() {
        let x = mesh.point_from_barycentric(j, *l);
        let (mw, kw) = sampling_weights(sol, &d, x);
        let e = sol.field.value_in(j, l);
        let wx = w * mesh.volumes[j];
        a += wx * mw[i] * cnorm_sqr(v);
        b += wx * kw[i] * cnorm_sqr(std::array::from_fn(|r| e[r] + g[r]));
    }
    a.sqrt() + b.sqrt()
}

/// All indicators for `sol`, with `f_H` the elementwise L2 projection of
/// the source onto polynomials of degree `fh_degree` (0 or 1).
pub fn compute_indicators(sol: &HmmSolution, fh_degree: usize) -> Result<IndicatorTable> {
    if fh_degree > 1 {
        return Err(Error::InvalidArgument(format!("f_H degree must be 0 or 1, got {fh_degree}")));
    }
    let mesh = &sol.space.mesh;
    let micro = sol.micro();
    let data: Vec<SetData> = (0..sol.cells.cells.len())
        .into_par_iter()
        .map(|s| set_data(sol, s))
        .collect();
    let so = &sol.cells.samples.set_of;
    let rule2 = tet_rule(2).expect("degree-2 rule");
    let rule4 = tet_rule(4).expect("degree-4 rule");
    let shared = if sol.coeffs.x_independent() {
        Some(
            data.iter()
                .map(|d| sampling_weights(sol, d, mesh.barycenters[0]))
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let per_element: Vec<([f64; 2], f64, [f64; 2], f64)> = (0..mesh.n_tets())
        .into_par_iter()
        .map(|j| {
            let d = &data[so[j]];
            let vol = mesh.volumes[j];
            let hj = mesh.diameters[j];
            let fh = project_source(sol, j, fh_degree);
            let mut r1 = 0.0;
            for (l, w) in rule2.iter() {
                let fl = fh.at(l);
                let dl = field_flux(sol, d, j, l);
                r1 += w * vol * cnorm_sqr(std::array::from_fn(|c| fl[c] + dl[c]));
            }
            let div = sol.field.div_in(j) * d.kappa_mean;
            let eta2 = hj * vol.sqrt() * div.norm();
            let mut z = 0.0;
            for (l, w) in rule4.iter() {
                let f = sol.source.eval(mesh.point_from_barycentric(j, *l));
                let fl = fh.at(l);
                z += w * vol * cnorm_sqr(std::array::from_fn(|c| fl[c] - f[c]));
            }
            // Micro jump sums through the set Grams.
            let c = sol.curls[j];
            let mut m1 = CZERO;
            for p in 0..3 {
                for q in 0..3 {
                    m1 += c[p].conj() * d.q1[p][q] * c[q];
                }
            }
            let k2 = sol.centers[j];
            let mut m2 = 0.0;
            let mut ev = Vec::with_capacity(rule2.len());
            for (l, w) in rule2.iter() {
                let e = sol.field.value_in(j, l);
                ev.push((w * vol, e));
                m2 += w * vol * hform6(&d.q2, &[e[0], e[1], e[2], k2[0], k2[1], k2[2]]);
            }
            // zeta_{ji}: moments of E_H on T_j give the x-integrals in closed form.
            let own;
            let (mw_q, kw_q): (Vec<&[f64]>, Vec<&[f64]>) = match &shared {
                Some(s) => (vec![&s[so[j]].0[..]; ev.len()], vec![&s[so[j]].1[..]; ev.len()]),
                None => {
                    own = rule2
                        .iter()
                        .map(|(l, _)| sampling_weights(sol, d, mesh.point_from_barycentric(j, *l)))
                        .collect::<Vec<_>>();
                    (own.iter().map(|p| &p.0[..]).collect(), own.iter().map(|p| &p.1[..]).collect())
                }
            };
            let mut zm = 0.0;
            for i in 0..micro.n_tets() {
                let cc = matvec_r(&d.curl[i], c);
                let v: CVec3 = std::array::from_fn(|r| c[r] + cc[r]);
                let g = matvec_c(&d.grad[i], k2);
                let (mut a, mut b) = (0.0, 0.0);
                for (q, (wx, e)) in ev.iter().enumerate() {
                    a += wx * mw_q[q][i];
                    b += wx * kw_q[q][i] * cnorm_sqr(std::array::from_fn(|r| e[r] + g[r]));
                }
                let z = (a * cnorm_sqr(v)).sqrt() + b.sqrt();
                zm += z * z;
            }
            (
                [hj * r1.sqrt(), eta2],
                hj * z.sqrt(),
                [vol * m1.re.max(0.0), m2],
                zm,
            )
        })
        .collect();
    let faces: Vec<FaceIndicator> = mesh
        .faces
        .par_iter()
        .enumerate()
        .filter_map(|(k, f)| {
            let (nb, _) = f.neighbor?;
            Some(FaceIndicator {
                face: k,
                owner: f.owner,
                neighbor: nb,
                eta: face_jumps(sol, &data, f, f.owner, nb),
            })
        })
        .collect();
    let mut table = IndicatorTable {
        element: per_element.iter().map(|p| p.0).collect(),
        zeta: per_element.iter().map(|p| p.1).collect(),
        faces,
        micro_sq: per_element.iter().map(|p| p.2).collect(),
        zeta_micro_sq: per_element.iter().map(|p| p.3).collect(),
        aggregates: Aggregates::default(),
        fh_degree,
    };
    table.aggregates = table.aggregate();
    Ok(table)
}

impl IndicatorTable {
    /// Recomputes the five groups from the entries.
    pub fn aggregate(&self) -> Aggregates {
        Aggregates {
            element: self.element.iter().map(|e| e[0] * e[0] + e[1] * e[1]).sum::<f64>().sqrt(),
            face: self.faces.iter().map(|f| f.eta[0].powi(2) + f.eta[1].powi(2)).sum::<f64>().sqrt(),
            micro: self.micro_sq.iter().map(|m| m[0] + m[1]).sum::<f64>().sqrt(),
            zeta: self.zeta.iter().map(|z| z * z).sum::<f64>().sqrt(),
            zeta_micro: self.zeta_micro_sq.iter().sum::<f64>().sqrt(),
        }
    }

    pub fn n_elements(&self) -> usize {
        self.element.len()
    }

    /// Sum of the three residual groups over the energy-norm error.
    pub fn effectivity(&self, error: f64) -> Effectivity {
        if !(error > 1e-14 * self.aggregates.eta_total().max(1e-300)) {
            Effectivity::Undefined
        } else {
            Effectivity::Value(self.aggregates.eta_total() / error)
        }
    }

    /// Largest ratios `eta / (local error + local zeta)`; `local_error[j]`
    /// is the energy error on `T_j x Y`.
    pub fn local_efficiency(&self, local_error: &[f64]) -> LocalEfficiency {
        let zm: Vec<f64> = self.zeta_micro_sq.iter().map(|z| z.sqrt()).collect();
        let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };
        let mut out = LocalEfficiency::default();
        for j in 0..self.n_elements() {
            let e = local_error[j];
            out.element = out.element.max(ratio(self.element[j][0], e + self.zeta[j] + zm[j]));
            out.divergence = out.divergence.max(ratio(self.element[j][1], e + zm[j]));
            let m = (self.micro_sq[j][0] + self.micro_sq[j][1]).sqrt();
            out.micro = out.micro.max(ratio(m, e + zm[j]));
        }
        for f in &self.faces {
            let (a, b) = (f.owner, f.neighbor);
            let e = local_error[a].hypot(local_error[b]);
            let z = self.zeta[a].hypot(self.zeta[b]);
            let m = zm[a].hypot(zm[b]);
            let eta = f.eta[0].hypot(f.eta[1]);
            out.face = out.face.max(ratio(eta, e + z + m));
        }
        out
    }

    /// One row per indicator entry, then the aggregates and, when given,
    /// the effectivity.
    pub fn write_csv<W: Write>(&self, mut w: W, effectivity: Option<Effectivity>) -> Result<()> {
        use crate::output::fmt_f64 as f;
        writeln!(w, "kind,j,l,value")?;
        for (j, e) in self.element.iter().enumerate() {
            writeln!(w, "eta_j1,{j},,{}", f(e[0]))?;
            writeln!(w, "eta_j2,{j},,{}", f(e[1]))?;
            writeln!(w, "zeta_j,{j},,{}", f(self.zeta[j]))?;
            writeln!(w, "eta_micro1_sq_sum,{j},,{}", f(self.micro_sq[j][0]))?;
            writeln!(w, "eta_micro2_sq_sum,{j},,{}", f(self.micro_sq[j][1]))?;
            writeln!(w, "zeta_micro_sq_sum,{j},,{}", f(self.zeta_micro_sq[j]))?;
        }
        for fc in &self.faces {
            writeln!(w, "eta_jl1,{},{},{}", fc.owner, fc.neighbor, f(fc.eta[0]))?;
            writeln!(w, "eta_jl2,{},{},{}", fc.owner, fc.neighbor, f(fc.eta[1]))?;
        }
        let a = &self.aggregates;
        for (k, v) in [
            ("aggregate_element", a.element),
            ("aggregate_face", a.face),
            ("aggregate_micro", a.micro),
            ("aggregate_zeta", a.zeta),
            ("aggregate_zeta_micro", a.zeta_micro),
            ("eta_total", a.eta_total()),
        ] {
            writeln!(w, "{k},,,{}", f(v))?;
        }
        match effectivity {
            Some(Effectivity::Value(v)) => writeln!(w, "effectivity,,,{}", f(v))?,
            Some(Effectivity::Undefined) => writeln!(w, "effectivity,,,undefined")?,
            None => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoefficientField, SourceField, LOSS_FACTOR};
    use crate::hmm::{solve_hmm, HmmConfig};
    use crate::mesh::BoxDomain;

    fn solve(coeffs: CoefficientField, source: SourceField, n: usize, m: usize) -> HmmSolution {
        solve_hmm(&HmmConfig {
            domain: BoxDomain::unit_cube(),
            macro_n: n,
            micro_n: m,
            coeffs,
            source,
            delta: 0.25,
        })
        .unwrap()
    }

    fn laminate(n: usize, m: usize) -> HmmSolution {
        solve(
            CoefficientField::laminate(2.0, 1.0, 0).unwrap(),
            SourceField::SinE1 { amp: Complex64::from(1.0) },
            n,
            m,
        )
    }

    #[test]
    fn constant_preset_has_no_micro_terms() {
        let s = solve(
            CoefficientField::constant(1.5, LOSS_FACTOR).unwrap(),
            SourceField::Constant([Complex64::from(1.0), CZERO, Complex64::new(0.0, 2.0)]),
            2,
            4,
        );
        let t = compute_indicators(&s, 1).unwrap();
        for j in 0..t.n_elements() {
            assert!(t.micro_sq[j][0].sqrt() <= 1e-12 && t.micro_sq[j][1].sqrt() <= 1e-12);
            assert!(t.zeta_micro_sq[j].sqrt() <= 1e-12);
            assert!(t.element[j][1] <= 1e-12);
            assert!(t.zeta[j] <= 1e-12);
        }
        assert!(t.aggregates.element > 0.0);
    }

    #[test]
    fn aggregates_are_root_sums() {
        let s = laminate(2, 4);
        let t = compute_indicators(&s, 1).unwrap();
        let a = t.aggregate();
        let b = t.aggregates;
        for (x, y) in [(a.element, b.element), (a.face, b.face), (a.micro, b.micro), (a.zeta, b.zeta), (a.zeta_micro, b.zeta_micro)] {
            assert!((x - y).abs() <= 1e-12 * x.max(1.0));
        }
        assert!(t.element.iter().all(|e| e[0] >= 0.0 && e[1] >= 0.0));
        assert!(t.element.iter().all(|e| e[1] <= 1e-12 * (1.0 + e[0])));
        assert!(t.micro_sq.iter().all(|m| m[0] >= 0.0 && m[1] >= 0.0));
    }

    #[test]
    fn micro_sums_match_single_entries() {
        let s = laminate(1, 2);
        let t = compute_indicators(&s, 1).unwrap();
        let micro = s.micro();
        for j in [0, 3] {
            let (mut a, mut b) = (0.0, 0.0);
            for k in 0..micro.faces.len() {
                let e = micro_face_indicators(&s, j, k, false);
                let g = micro_face_indicators(&s, j, k, true);
                assert!((e[0] - g[0]).abs() <= 1e-14 * (1.0 + e[0]));
                assert!((e[1] - g[1]).abs() <= 1e-14 * (1.0 + e[1]));
                a += e[0] * e[0];
                b += e[1] * e[1];
            }
            assert!((a - t.micro_sq[j][0]).abs() <= 1e-10 * a.max(1e-30));
            assert!((b - t.micro_sq[j][1]).abs() <= 1e-10 * b.max(1e-30));
            let z: f64 = (0..micro.n_tets()).map(|i| zeta_micro(&s, j, i).powi(2)).sum();
            assert!((z - t.zeta_micro_sq[j]).abs() <= 1e-10 * z);
        }
    }

    #[test]
    fn face_indicators_ignore_orientation() {
        let s = laminate(2, 2);
        let t = compute_indicators(&s, 0).unwrap();
        for f in t.faces.iter().take(12) {
            let a = face_indicators(&s, f.face, f.owner, f.neighbor);
            let b = face_indicators(&s, f.face, f.neighbor, f.owner);
            for k in 0..2 {
                assert!((a[k] - f.eta[k]).abs() <= 1e-14 * (1.0 + a[k]));
                assert!((a[k] - b[k]).abs() <= 1e-14 * (1.0 + a[k]));
            }
        }
    }

    #[test]
    fn effectivity_is_scale_invariant() {
        let a = laminate(2, 2);
        let b = solve(
            CoefficientField::laminate(2.0, 1.0, 0).unwrap(),
            SourceField::SinE1 { amp: Complex64::from(2.0) },
            2,
            2,
        );
        let r = laminate(4, 4);
        let rb = solve(
            CoefficientField::laminate(2.0, 1.0, 0).unwrap(),
            SourceField::SinE1 { amp: Complex64::from(2.0) },
            4,
            4,
        );
        let ea = crate::errors::error_triple(&a, &r).unwrap().total;
        let eb = crate::errors::error_triple(&b, &rb).unwrap().total;
        let ta = compute_indicators(&a, 1).unwrap().effectivity(ea).value().unwrap();
        let tb = compute_indicators(&b, 1).unwrap().effectivity(eb).value().unwrap();
        assert!((ta - tb).abs() <= 1e-10 * ta);
        assert_eq!(compute_indicators(&a, 1).unwrap().effectivity(0.0), Effectivity::Undefined);
    }

    #[test]
    fn projection_degree_controls_zeta() {
        let s = laminate(2, 2);
        let t0 = compute_indicators(&s, 0).unwrap();
        let t1 = compute_indicators(&s, 1).unwrap();
        assert!(t1.aggregates.zeta < t0.aggregates.zeta);
        assert!(compute_indicators(&s, 2).is_err());
    }

    #[test]
    fn csv_has_summary_rows() {
        let s = laminate(1, 2);
        let t = compute_indicators(&s, 1).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, Some(Effectivity::Value(1.5))).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("kind,j,l,value\n"));
        assert!(text.contains("aggregate_micro,,,"));
        assert!(text.lines().last().unwrap().starts_with("effectivity,,,1.5"));
    }
}
