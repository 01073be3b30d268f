//! Two-scale energy norms, reference solutions and error measures.
//!
//! The energy norm of a triple `(u, u1, u2)` on `Omega x Y` is
//! `||curl u + curl_y u1|| + ||div_y u1|| + ||u + grad_y u2||`. Because
//! `curl_y u1` and `grad_y u2` have zero mean over `Y`, each squared part
//! splits exactly into a macro integral plus a Y-integral of the corrector
//! terms; the latter reduce to small Gram matrices per pair of cell solutions.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::cell::{corrector_curl, corrector_div, CellCorrectorSet};
use crate::coeffs::{CoefficientField, CoefficientParams, SourceField};
use crate::error::{Error, Result};
use crate::fespace::{p1_local_matrices, EdgeField, EdgeSpace};
use crate::geom::{cnorm_sqr, csub, CVec3, Vec3, CZERO, CZERO3};
use crate::hmm::{assemble_load, assemble_single_scale, relative_residual, solve_hmm, HmmConfig, HmmSolution};
use crate::linsolve::{Factorization, SparseSystem, SymmetryTag};
use crate::mesh::{build_box_mesh, BoxDomain, MacroMesh, PeriodicMicroMesh, TetMesh};
use crate::quadrature::tet_rule;

/// An analytic macro field returning value and curl.
pub type MacroFn = Arc<dyn Fn(Vec3) -> (CVec3, CVec3) + Send + Sync>;

#[derive(Clone)]
pub enum MacroPart {
    Zero,
    Edge(EdgeField),
    Analytic(MacroFn),
}

impl std::fmt::Debug for MacroPart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Edge(e) => write!(f, "Edge(n = {})", e.space.mesh.n),
            Self::Analytic(_) => write!(f, "Analytic"),
        }
    }
}

/// Discrete correctors: on macro element `j`,
/// `u1 = sum_k k1[j][k] V_k` and `u2 = sum_k k2[j][k] v_k` with the cell
/// basis functions of the element's sample set.
#[derive(Clone, Debug)]
pub struct CorrectorPart {
    pub macro_mesh: Arc<MacroMesh>,
    pub cells: Arc<CellCorrectorSet>,
    pub k1: Vec<CVec3>,
    pub k2: Vec<CVec3>,
}

/// A two-scale triple `(u, u1, u2)`.
#[derive(Clone, Debug)]
pub struct TwoScaleField {
    pub macro_part: MacroPart,
    pub correctors: Option<CorrectorPart>,
}

impl TwoScaleField {
    pub fn zero() -> Self {
        Self {
            macro_part: MacroPart::Zero,
            correctors: None,
        }
    }

    pub fn analytic(f: MacroFn) -> Self {
        Self {
            macro_part: MacroPart::Analytic(f),
            correctors: None,
        }
    }

    pub fn edge(field: EdgeField) -> Self {
        Self {
            macro_part: MacroPart::Edge(field),
            correctors: None,
        }
    }

    /// The discrete triple `(E_H, K_{h,1}(E_H), K_{h,2}(E_H))`.
    pub fn from_hmm(sol: &HmmSolution) -> Self {
        Self {
            macro_part: MacroPart::Edge(sol.field.clone()),
            correctors: Some(CorrectorPart {
                macro_mesh: sol.space.mesh.clone(),
                cells: sol.cells.clone(),
                k1: sol.curls.clone(),
                k2: sol.centers.clone(),
            }),
        }
    }

    /// The same triple scaled by `s`.
    pub fn scaled(&self, s: Complex64) -> Self {
        let macro_part = match &self.macro_part {
            MacroPart::Zero => MacroPart::Zero,
            MacroPart::Edge(e) => MacroPart::Edge(EdgeField::from_all_edges(
                e.space.clone(),
                e.edge_values.iter().map(|v| v * s).collect(),
            )),
            MacroPart::Analytic(f) => {
                let f = f.clone();
                MacroPart::Analytic(Arc::new(move |x| {
                    let (v, c) = f(x);
                    (v.map(|z| z * s), c.map(|z| z * s))
                }))
            }
        };
        let correctors = self.correctors.as_ref().map(|c| CorrectorPart {
            macro_mesh: c.macro_mesh.clone(),
            cells: c.cells.clone(),
            k1: c.k1.iter().map(|v| v.map(|z| z * s)).collect(),
            k2: c.k2.iter().map(|v| v.map(|z| z * s)).collect(),
        });
        Self { macro_part, correctors }
    }

    fn macro_mesh(&self) -> Option<&TetMesh> {
        match &self.macro_part {
            MacroPart::Edge(e) => Some(&e.space.mesh),
            _ => None,
        }
    }
}

/// Energy norm parts: `curl`, `div` and `l2` are the three L2 norms, `total`
/// their sum; `local_sq[J]` is the squared error of integration tet `J`.
#[derive(Clone, Debug, Default)]
pub struct EnergyParts {
    pub curl: f64,
    pub div: f64,
    pub l2: f64,
    pub total: f64,
    pub local_sq: Vec<f64>,
}

fn nested(coarse: &TetMesh, fine: &TetMesh) -> Result<()> {
    let same = (0..3).all(|a| {
        (coarse.domain.lo[a] - fine.domain.lo[a]).abs() < 1e-12 && (coarse.domain.hi[a] - fine.domain.hi[a]).abs() < 1e-12
    });
    if !same || !fine.n.is_multiple_of(coarse.n) {
        return Err(Error::NotNested(format!(
            "mesh with n = {} is not a refinement of n = {} on the same domain",
            fine.n, coarse.n
        )));
    }
    Ok(())
}

/// Per micro integration tet, the cell tet of each field's micro mesh.
fn micro_map(from: &PeriodicMicroMesh, to: &PeriodicMicroMesh) -> Vec<usize> {
    (0..from.n_tets())
        .map(|i| to.locate_periodic(from.barycenters[i]).0)
        .collect()
}

/// Gram matrices of the corrector terms of a pair of sample sets.
#[derive(Clone, Copy, Debug)]
struct Gram {
    curl: [[f64; 6]; 6],
    div: [[f64; 6]; 6],
    grad: [[Complex64; 6]; 6],
}

struct Side<'a> {
    part: Option<&'a CorrectorPart>,
    map: Vec<usize>,
}

impl Side<'_> {
    /// Curl columns, divergences and gradient columns of the three basis
    /// functions of set `s` on integration tet `i`.
    fn local(&self, s: usize, i: usize) -> ([Vec3; 3], [f64; 3], [CVec3; 3]) {
        let Some(p) = self.part else {
            return ([[0.0; 3]; 3], [0.0; 3], [CZERO3; 3]);
        };
        let cell = &p.cells.cells[s];
        let micro = p.cells.micro();
        let t = self.map[i];
        let curls = std::array::from_fn(|k| corrector_curl(micro, &cell.curl_correctors[k], t));
        let divs = std::array::from_fn(|k| corrector_div(micro, &cell.curl_correctors[k], t));
        let grads = std::array::from_fn(|k| p.cells.space.gradient(&cell.grad_correctors[k], t));
        (curls, divs, grads)
    }
}

fn gram(u: &Side, v: &Side, su: usize, sv: usize, ymesh: &PeriodicMicroMesh) -> Gram {
    let mut g = Gram {
        curl: [[0.0; 6]; 6],
        div: [[0.0; 6]; 6],
        grad: [[CZERO; 6]; 6],
    };
    for i in 0..ymesh.n_tets() {
        let w = ymesh.volumes[i];
        let (cu, du, gu) = u.local(su, i);
        let (cv, dv, gv) = v.local(sv, i);
        // Column p of the 3x6 operator [U | -V].
        let col_c = |p: usize| if p < 3 { cu[p] } else { cv[p - 3].map(|x| -x) };
        let col_d = |p: usize| if p < 3 { du[p] } else { -dv[p - 3] };
        let col_g = |p: usize| if p < 3 { gu[p] } else { gv[p - 3].map(|x| -x) };
        for p in 0..6 {
            let (cp, dp, gp) = (col_c(p), col_d(p), col_g(p));
            for q in 0..6 {
                let (cq, dq, gq) = (col_c(q), col_d(q), col_g(q));
                g.curl[p][q] += w * (cp[0] * cq[0] + cp[1] * cq[1] + cp[2] * cq[2]);
                g.div[p][q] += w * dp * dq;
                g.grad[p][q] += (gp[0].conj() * gq[0] + gp[1].conj() * gq[1] + gp[2].conj() * gq[2]) * w;
            }
        }
    }
    g
}

fn quad_form_real(m: &[[f64; 6]; 6], w: &[Complex64; 6]) -> f64 {
    let mut s = CZERO;
    for p in 0..6 {
        for q in 0..6 {
            s += w[p].conj() * m[p][q] * w[q];
        }
    }
    s.re.max(0.0)
}

fn quad_form(m: &[[Complex64; 6]; 6], w: &[Complex64; 6]) -> f64 {
    let mut s = CZERO;
    for p in 0..6 {
        for q in 0..6 {
            s += w[p].conj() * m[p][q] * w[q];
        }
    }
    s.re.max(0.0)
}

/// Energy norm of `u - v`, integrated on the macro mesh `xmesh` and the
/// micro mesh `ymesh`; every discrete part must live on meshes that
/// `xmesh` and `ymesh` refine.
pub fn energy_norm_diff(u: &TwoScaleField, v: &TwoScaleField, xmesh: &TetMesh, ymesh: &PeriodicMicroMesh) -> Result<EnergyParts> {
    for f in [u, v] {
        if let Some(m) = f.macro_mesh() {
            nested(m, xmesh)?;
        }
        if let Some(c) = &f.correctors {
            nested(&c.macro_mesh, xmesh)?;
            if !ymesh.n.is_multiple_of(c.cells.micro().n) {
                return Err(Error::NotNested(format!(
                    "micro mesh n = {} does not refine n = {}",
                    ymesh.n,
                    c.cells.micro().n
                )));
            }
        }
    }
    let analytic = matches!(u.macro_part, MacroPart::Analytic(_)) || matches!(v.macro_part, MacroPart::Analytic(_));
    let rule = tet_rule(if analytic { 4 } else { 2 }).expect("tet rule");
    let sides = [u, v].map(|f| Side {
        part: f.correctors.as_ref(),
        map: f
            .correctors
            .as_ref()
            .map(|c| micro_map(ymesh, c.cells.micro()))
            .unwrap_or_default(),
    });
    let elem = |f: &TwoScaleField, x: Vec3| -> Option<usize> {
        f.correctors.as_ref().map(|c| c.macro_mesh.locate(x).map(|r| r.0).unwrap_or(0))
    };
    let set_of = |f: &TwoScaleField, j: Option<usize>| -> usize {
        match (&f.correctors, j) {
            (Some(c), Some(j)) => c.cells.samples.set_of[j],
            _ => 0,
        }
    };
    let n = xmesh.n_tets();
    // Element of each corrector mesh containing each integration tet.
    let owners: Vec<(Option<usize>, Option<usize>)> = (0..n)
        .into_par_iter()
        .map(|t| (elem(u, xmesh.barycenters[t]), elem(v, xmesh.barycenters[t])))
        .collect();
    let mut pairs: Vec<(usize, usize)> = owners.iter().map(|(a, b)| (set_of(u, *a), set_of(v, *b))).collect();
    pairs.sort_unstable();
    pairs.dedup();
    let has_corr = u.correctors.is_some() || v.correctors.is_some();
    let grams: HashMap<(usize, usize), Gram> = if has_corr {
        pairs
            .par_iter()
            .map(|&(a, b)| ((a, b), gram(&sides[0], &sides[1], a, b, ymesh)))
            .collect()
    } else {
        HashMap::new()
    };
    let macro_eval = |f: &TwoScaleField, t: usize, x: Vec3, hint: &mut Option<usize>| -> (CVec3, CVec3) {
        match &f.macro_part {
            MacroPart::Zero => (CZERO3, CZERO3),
            MacroPart::Analytic(g) => g(x),
            MacroPart::Edge(e) => {
                let j = *hint.get_or_insert_with(|| e.space.mesh.locate(xmesh.barycenters[t]).map(|r| r.0).unwrap_or(0));
                let l = e.space.mesh.barycentric(j, x);
                (e.value_in(j, &l), e.curl_in(j))
            }
        }
    };
    let coef = |f: &TwoScaleField, j: Option<usize>| -> (CVec3, CVec3) {
        match (&f.correctors, j) {
            (Some(c), Some(j)) => (c.k1[j], c.k2[j]),
            _ => (CZERO3, CZERO3),
        }
    };
    let parts: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|t| {
            let vol = xmesh.volumes[t];
            let (mut curl, mut l2) = (0.0, 0.0);
            let (mut hu, mut hv) = (None, None);
            for (l, w) in rule.iter() {
                let x = xmesh.point_from_barycentric(t, *l);
                let (a, ca) = macro_eval(u, t, x, &mut hu);
                let (b, cb) = macro_eval(v, t, x, &mut hv);
                l2 += w * vol * cnorm_sqr(csub(a, b));
                curl += w * vol * cnorm_sqr(csub(ca, cb));
            }
            let mut div = 0.0;
            if has_corr {
                let (ju, jv) = owners[t];
                let g = &grams[&(set_of(u, ju), set_of(v, jv))];
                let (k1u, k2u) = coef(u, ju);
                let (k1v, k2v) = coef(v, jv);
                let w1 = [k1u[0], k1u[1], k1u[2], k1v[0], k1v[1], k1v[2]];
                let w2 = [k2u[0], k2u[1], k2u[2], k2v[0], k2v[1], k2v[2]];
                curl += vol * quad_form_real(&g.curl, &w1);
                div = vol * quad_form_real(&g.div, &w1);
                l2 += vol * quad_form(&g.grad, &w2);
            }
            [curl, div, l2]
        })
        .collect();
    let mut s = [0.0; 3];
    let mut local_sq = Vec::with_capacity(n);
    for p in &parts {
        for k in 0..3 {
            s[k] += p[k];
        }
        local_sq.push(p[0] + p[1] + p[2]);
    }
    let (curl, div, l2) = (s[0].sqrt(), s[1].sqrt(), s[2].sqrt());
    Ok(EnergyParts {
        curl,
        div,
        l2,
        total: curl + div + l2,
        local_sq,
    })
}

/// Energy norm of a single triple.
pub fn energy_norm(t: &TwoScaleField, xmesh: &TetMesh, ymesh: &PeriodicMicroMesh) -> Result<EnergyParts> {
    energy_norm_diff(t, &TwoScaleField::zero(), xmesh, ymesh)
}

/// Energy-norm error of `coarse` against a reference on nested meshes.
pub fn error_triple(coarse: &HmmSolution, reference: &HmmSolution) -> Result<EnergyParts> {
    nested(&coarse.space.mesh, &reference.space.mesh)?;
    if !reference.micro().n.is_multiple_of(coarse.micro().n) {
        return Err(Error::NotNested(format!(
            "micro mesh n = {} does not refine n = {}",
            reference.micro().n,
            coarse.micro().n
        )));
    }
    energy_norm_diff(
        &TwoScaleField::from_hmm(reference),
        &TwoScaleField::from_hmm(coarse),
        &reference.space.mesh,
        reference.micro(),
    )
}

/// Sums per-tet values of a fine mesh onto the coarse tets containing them.
pub fn aggregate_to(fine: &TetMesh, values: &[f64], coarse: &TetMesh) -> Result<Vec<f64>> {
    nested(coarse, fine)?;
    let mut out = vec![0.0; coarse.n_tets()];
    for t in 0..fine.n_tets() {
        let (j, _) = coarse.locate(fine.barycenters[t])?;
        out[j] += values[t];
    }
    Ok(out)
}

/// A direct single-scale solution of the heterogeneous problem.
#[derive(Clone, Debug)]
pub struct FineSolution {
    pub space: Arc<EdgeSpace>,
    pub dofs: Vec<Complex64>,
    pub field: EdgeField,
    pub delta: f64,
    pub residual: f64,
}

/// Default resolution guard: fine cubes no larger than `delta / 8`.
pub const RESOLUTION_GUARD: f64 = 8.0;

/// Smallest fine `n` allowed by the guard.
pub fn required_fine_n(domain: &BoxDomain, delta: f64, guard: f64) -> usize {
    let ext = domain.extent().iter().copied().fold(0.0, f64::max);
    (guard * ext / delta - 1e-9).ceil() as usize
}

/// Solves `curl(mu_delta^-1 curl E) - kappa_delta E = f` directly on the
/// `n`-mesh with coefficients sampled at tet barycenters.
pub fn solve_direct_fine(
    coeffs: &CoefficientField,
    delta: f64,
    source: &SourceField,
    domain: BoxDomain,
    n: usize,
    guard: f64,
) -> Result<FineSolution> {
    solve_direct_fine_shifted(coeffs, delta, [0.0; 3], source, domain, n, guard)
}

/// As [`solve_direct_fine`] with coefficients `a(x + shift, (x + shift) / delta)`.
pub fn solve_direct_fine_shifted(
    coeffs: &CoefficientField,
    delta: f64,
    shift: Vec3,
    source: &SourceField,
    domain: BoxDomain,
    n: usize,
    guard: f64,
) -> Result<FineSolution> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let required = required_fine_n(&domain, delta, guard);
    if n < required {
        return Err(Error::Resolution { given: n, required });
    }
    let mesh = Arc::new(build_box_mesh(domain, n)?);
    let space = Arc::new(EdgeSpace::new(mesh.clone()));
    let xs: Vec<Vec3> = mesh.barycenters.iter().map(|x| std::array::from_fn(|a| x[a] + shift[a])).collect();
    let ys: Vec<Vec3> = xs.iter().map(|x| x.map(|v| v / delta)).collect();
    let mu: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| coeffs.mu_inv(*x, *y)).collect();
    let ka: Vec<Complex64> = xs.iter().zip(&ys).map(|(x, y)| coeffs.kappa(*x, *y)).collect();
    let sys = assemble_single_scale(&space, &mu, &ka)?;
    let rhs = assemble_load(&space, source);
    let fact = Factorization::new(&sys)?;
    drop(sys);
    let dofs = fact.solve(&rhs)?;
    let residual = relative_residual(&fact.matrix, &dofs, &rhs);
    let field = EdgeField::from_dofs(space.clone(), &dofs);
    Ok(FineSolution {
        space,
        dofs,
        field,
        delta,
        residual,
    })
}

/// `||E_delta - E_HMM||` in L2 and for the composite curl, by the degree-2
/// rule on the fine mesh.
pub fn modeling_error(fine: &FineSolution, hmm: &HmmSolution) -> Result<(f64, f64)> {
    let mesh = &fine.space.mesh;
    let rule = tet_rule(2).expect("degree-2 rule");
    let parts: Vec<(f64, f64)> = (0..mesh.n_tets())
        .into_par_iter()
        .map(|t| -> Result<(f64, f64)> {
            let mut s = (0.0, 0.0);
            let curl_f = fine.field.curl_in(t);
            for (l, w) in rule.iter() {
                let x = mesh.point_from_barycentric(t, *l);
                let e = fine.field.value_in(t, l);
                let (v, c) = hmm.evaluate_ehmm(x)?;
                s.0 += w * mesh.volumes[t] * cnorm_sqr(csub(e, v));
                s.1 += w * mesh.volumes[t] * cnorm_sqr(csub(curl_f, c));
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let (a, b) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    Ok((a.sqrt(), b.sqrt()))
}

/// The manufactured solution `sin(pi x2) sin(pi x3) e1` and its curl.
pub fn mms_exact(x: Vec3) -> (CVec3, CVec3) {
    let (s2, c2) = (PI * x[1]).sin_cos();
    let (s3, c3) = (PI * x[2]).sin_cos();
    let c = |v: f64| Complex64::from(v);
    ([c(s2 * s3), CZERO, CZERO], [CZERO, c(PI * s2 * c3), c(-PI * c2 * s3)])
}

/// One row of the manufactured-solution study.
#[derive(Clone, Debug, serde::Serialize)]
pub struct MmsRow {
    pub n: usize,
    pub h: f64,
    pub l2: f64,
    pub curl: f64,
    /// `(||e||^2 + ||curl e||^2)^(1/2)`.
    pub hcurl: f64,
    pub interpolation_hcurl: f64,
    pub theta: f64,
    pub z: f64,
    pub h_minus1: f64,
    pub residual: f64,
}

/// Constant-coefficient study with `mu^-1 = 1`, `kappa = k0` on the unit
/// cube against the exact solution; the Helmholtz split uses a mesh
/// refined by `split_factor`.
pub fn mms_reference(k0: Complex64, ns: &[usize], micro_n: usize, split_factor: usize) -> Result<Vec<MmsRow>> {
    let domain = BoxDomain::unit_cube();
    let p = CoefficientParams {
        m0: 1.0,
        k0_re: k0.re,
        k0_im: k0.im,
        ..Default::default()
    };
    let coeffs = CoefficientField::preset("constant", &p, &domain)?;
    let exact = TwoScaleField::analytic(Arc::new(mms_exact));
    let mut rows = Vec::new();
    for &n in ns {
        let cfg = HmmConfig {
            domain,
            macro_n: n,
            micro_n,
            coeffs: coeffs.clone(),
            source: SourceField::mms(k0),
            delta: 1.0,
        };
        let sol = solve_hmm(&cfg)?;
        let mesh = &sol.space.mesh;
        let err = energy_norm_diff(&exact, &TwoScaleField::edge(sol.field.clone()), mesh, sol.micro())?;
        let interp = EdgeField::from_all_edges(sol.space.clone(), sol.space.interpolate_all_edges(|x| mms_exact(x).0));
        let ierr = energy_norm_diff(&exact, &TwoScaleField::edge(interp), mesh, sol.micro())?;
        let field = sol.field.clone();
        let e = move |x: Vec3| -> CVec3 { csub(mms_exact(x).0, field.evaluate(x).map(|r| r.0).unwrap_or(CZERO3)) };
        let split = helmholtz_split(&e, &*build_box_mesh(domain, n * split_factor)?)?;
        rows.push(MmsRow {
            n,
            h: mesh.max_diameter(),
            l2: err.l2,
            curl: err.curl,
            hcurl: (err.l2.powi(2) + err.curl.powi(2)).sqrt(),
            interpolation_hcurl: (ierr.l2.powi(2) + ierr.curl.powi(2)).sqrt(),
            theta: split.theta,
            z: split.z,
            h_minus1: split.h_minus1,
            residual: sol.residual,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `log err` against `log h`.
pub fn observed_rate(h: &[f64], err: &[f64]) -> f64 {
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Norms of the discrete Helmholtz split of an error field.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct SplitNorms {
    pub theta: f64,
    pub z: f64,
    /// `|w|_1` for `-Laplace w = e`, `w` in the vector P1 space: the
    /// discrete H^-1 norm of `e`.
    pub h_minus1: f64,
}

/// Discrete Helmholtz split `e = grad theta + z` with `theta` in the P1
/// space of `mesh` vanishing on the boundary, by the degree-4 rule.
pub fn helmholtz_split<F>(e: &F, mesh: &TetMesh) -> Result<SplitNorms>
where
    F: Fn(Vec3) -> CVec3 + Sync,
{
    let d = &mesh.domain;
    let on_boundary = |x: &Vec3| (0..3).any(|a| (x[a] - d.lo[a]).abs() < 1e-12 || (x[a] - d.hi[a]).abs() < 1e-12);
    let mut dof = vec![None; mesh.n_vertices()];
    let mut coords = Vec::new();
    for (v, x) in mesh.vertices.iter().enumerate() {
        if !on_boundary(x) {
            dof[v] = Some(coords.len());
            coords.push(*x);
        }
    }
    let n = coords.len();
    let rule = tet_rule(4).expect("degree-4 rule");
    // Per tet: stiffness, (e, grad phi_a) and (e_c, phi_a).
    type Local = ([[f64; 4]; 4], [Complex64; 4], [[Complex64; 3]; 4]);
    let locals: Vec<Local> = (0..mesh.n_tets())
        .into_par_iter()
        .map(|t| -> Result<Local> {
            let (k, _) = p1_local_matrices(mesh, t, Complex64::from(1.0))?;
            let g = &mesh.grads[t];
            let mut b = [CZERO; 4];
            let mut m = [[CZERO; 3]; 4];
            for (l, w) in rule.iter() {
                let ev = e(mesh.point_from_barycentric(t, *l));
                let wv = w * mesh.volumes[t];
                for a in 0..4 {
                    b[a] += (ev[0] * g[a][0] + ev[1] * g[a][1] + ev[2] * g[a][2]) * wv;
                    for c in 0..3 {
                        m[a][c] += ev[c] * (l[a] * wv);
                    }
                }
            }
            Ok((std::array::from_fn(|a| std::array::from_fn(|c| k[a][c].re)), b, m))
        })
        .collect::<Result<_>>()?;
    let mut sys = SparseSystem::with_capacity(n, SymmetryTag::RealSpd, "helmholtz split", 16 * mesh.n_tets());
    // Right-hand sides: theta (re, im), then w_c (re, im) for c = 0, 1, 2.
    let mut rhs = vec![vec![0.0; n]; 8];
    for (t, (k, b, m)) in locals.iter().enumerate() {
        let vs = mesh.tets[t];
        for a in 0..4 {
            let Some(da) = dof[vs[a]] else { continue };
            rhs[0][da] += b[a].re;
            rhs[1][da] += b[a].im;
            for c in 0..3 {
                rhs[2 + 2 * c][da] += m[a][c].re;
                rhs[3 + 2 * c][da] += m[a][c].im;
            }
            for c in 0..4 {
                if let Some(dc) = dof[vs[c]] {
                    sys.add(da, dc, k[a][c]);
                }
            }
        }
    }
    let sol = if n == 0 {
        vec![vec![]; 8]
    } else {
        Factorization::new(&sys.with_coords(coords))?.solve_many(&rhs)?
    };
    let h_minus1 = (0..8)
        .skip(2)
        .map(|r| rhs[r].iter().zip(&sol[r]).map(|(b, w)| b * w).sum::<f64>())
        .sum::<f64>()
        .max(0.0)
        .sqrt();
    let theta = |v: usize| dof[v].map_or(CZERO, |d| Complex64::new(sol[0][d], sol[1][d]));
    let parts: Vec<(f64, f64)> = (0..mesh.n_tets())
        .into_par_iter()
        .map(|t| {
            let vs = mesh.tets[t];
            let g = &mesh.grads[t];
            let th: [Complex64; 4] = std::array::from_fn(|a| theta(vs[a]));
            let mut grad = CZERO3;
            for a in 0..4 {
                for c in 0..3 {
                    grad[c] += th[a] * g[a][c];
                }
            }
            let mut s = (0.0, 0.0);
            for (l, w) in rule.iter() {
                let x = mesh.point_from_barycentric(t, *l);
                let tv: Complex64 = (0..4).map(|a| th[a] * l[a]).sum();
                s.0 += w * mesh.volumes[t] * tv.norm_sqr();
                s.1 += w * mesh.volumes[t] * cnorm_sqr(csub(e(x), grad));
            }
            s
        })
        .collect();
    let (a, b) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    Ok(SplitNorms {
        theta: a.sqrt(),
        z: b.sqrt(),
        h_minus1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{homogenize_all, CellSolution};
    use crate::coeffs::{SampledCoefficients, LOSS_FACTOR};
    use crate::fespace::PeriodicScalarSpace;
    use crate::hmm::solve_macro;
    use crate::mesh::build_periodic_cube_mesh;

    fn laminate_solution(n: usize, m: usize) -> HmmSolution {
        let cfg = HmmConfig {
            domain: BoxDomain::unit_cube(),
            macro_n: n,
            micro_n: m,
            coeffs: CoefficientField::laminate(2.0, 1.0, 0).unwrap(),
            source: SourceField::SinE1 { amp: Complex64::from(1.0) },
            delta: 0.25,
        };
        solve_hmm(&cfg).unwrap()
    }

    #[test]
    fn zero_field_and_self_difference() {
        let sol = laminate_solution(2, 2);
        let z = energy_norm(&TwoScaleField::zero(), &sol.space.mesh, sol.micro()).unwrap();
        assert_eq!(z.total, 0.0);
        let f = TwoScaleField::from_hmm(&sol);
        let nf = energy_norm(&f, &sol.space.mesh, sol.micro()).unwrap();
        assert!(nf.total > 0.0);
        // Squared quadratic forms lose half the digits near zero.
        let d = energy_norm_diff(&f, &f, &sol.space.mesh, sol.micro()).unwrap();
        assert!(d.total < 1e-6 * nf.total, "{}", d.total);
        let e = error_triple(&sol, &sol).unwrap();
        assert!(e.total < 1e-6 * nf.total);
    }

    #[test]
    fn macro_only_norm_for_constant_preset() {
        let cfg = HmmConfig {
            domain: BoxDomain::unit_cube(),
            macro_n: 2,
            micro_n: 2,
            coeffs: CoefficientField::constant(1.0, LOSS_FACTOR).unwrap(),
            source: SourceField::SinE1 { amp: Complex64::from(1.0) },
            delta: 0.5,
        };
        let sol = solve_hmm(&cfg).unwrap();
        let n = energy_norm(&TwoScaleField::from_hmm(&sol), &sol.space.mesh, sol.micro()).unwrap();
        let m = energy_norm(&TwoScaleField::edge(sol.field.clone()), &sol.space.mesh, sol.micro()).unwrap();
        assert!((n.total - m.total).abs() < 1e-12 * m.total);
        assert!(n.div < 1e-12);
    }

    #[test]
    fn corrector_only_norm_matches_direct_quadrature() {
        // u1 = interpolant of sin(2 pi y1) e2 on every element.
        let micro = Arc::new(build_periodic_cube_mesh(8).unwrap());
        let space = Arc::new(PeriodicScalarSpace::new(micro.clone()));
        let coords = crate::cell::master_coords(&micro);
        let mut v = vec![0.0; 3 * coords.len()];
        for (m, y) in coords.iter().enumerate() {
            v[3 * m + 1] = (2.0 * PI * y[0]).sin();
        }
        let zero = vec![0.0; 3 * coords.len()];
        let zs = vec![CZERO; coords.len()];
        let mac = Arc::new(build_box_mesh(BoxDomain::unit_cube(), 2).unwrap());
        let samples = SampledCoefficients::sample(&CoefficientField::laminate(2.0, 1.0, 0).unwrap(), &mac, &micro);
        let cells = Arc::new(CellCorrectorSet {
            space: space.clone(),
            samples: Arc::new(samples),
            cells: vec![CellSolution {
                curl_correctors: [v.clone(), zero.clone(), zero],
                grad_correctors: [zs.clone(), zs.clone(), zs],
                mhom: [[0.0; 3]; 3],
                khom: [[CZERO; 3]; 3],
            }],
        });
        let one = [Complex64::from(1.0), CZERO, CZERO];
        let field = TwoScaleField {
            macro_part: MacroPart::Zero,
            correctors: Some(CorrectorPart {
                macro_mesh: mac.clone(),
                cells,
                k1: vec![one; mac.n_tets()],
                k2: vec![CZERO3; mac.n_tets()],
            }),
        };
        let e = energy_norm(&field, &mac, &micro).unwrap();
        // Oracle: direct degree-4 quadrature of the same discrete function.
        let rule = tet_rule(4).unwrap();
        let (mut c2, mut d2) = (0.0, 0.0);
        for i in 0..micro.n_tets() {
            let cu = corrector_curl(&micro, &v, i);
            let dv = corrector_div(&micro, &v, i);
            for (_, w) in rule.iter() {
                c2 += w * micro.volumes[i] * (cu[0] * cu[0] + cu[1] * cu[1] + cu[2] * cu[2]);
                d2 += w * micro.volumes[i] * dv * dv;
            }
        }
        assert!((e.curl - c2.sqrt()).abs() < 1e-10);
        assert!((e.div - d2.sqrt()).abs() < 1e-10);
        assert!((e.curl - 2.0 * PI * 0.5f64.sqrt()).abs() < 0.1 * e.curl);
    }

    #[test]
    fn norm_axioms_on_discrete_triples() {
        let a = TwoScaleField::from_hmm(&laminate_solution(2, 2));
        let b = a.scaled(Complex64::new(0.3, -1.2));
        let xm = &*match &a.macro_part {
            MacroPart::Edge(e) => e.space.mesh.clone(),
            _ => unreachable!(),
        };
        let micro = a.correctors.as_ref().unwrap().cells.micro().clone();
        let na = energy_norm(&a, xm, &micro).unwrap();
        let nb = energy_norm(&b, xm, &micro).unwrap();
        let s = Complex64::new(0.3, -1.2).norm();
        assert!((nb.total - s * na.total).abs() < 1e-12 * nb.total);
        let neg = b.scaled(Complex64::from(-1.0));
        let nab = energy_norm_diff(&a, &neg, xm, &micro).unwrap();
        assert!(nab.curl <= na.curl + nb.curl + 1e-12);
        assert!(nab.div <= na.div + nb.div + 1e-12);
        assert!(nab.l2 <= na.l2 + nb.l2 + 1e-12);
    }

    #[test]
    fn error_decreases_under_joint_refinement() {
        let r = laminate_solution(8, 8);
        let e2 = error_triple(&laminate_solution(2, 2), &r).unwrap();
        let e4 = error_triple(&laminate_solution(4, 4), &r).unwrap();
        assert!(e4.total < e2.total, "{} vs {}", e4.total, e2.total);
        assert!(matches!(
            error_triple(&laminate_solution(3, 2), &r),
            Err(Error::NotNested(_))
        ));
    }

    #[test]
    fn constant_preset_error_equals_single_scale_error() {
        let k0 = LOSS_FACTOR;
        let coeffs = CoefficientField::constant(1.0, k0).unwrap();
        let mk = |n: usize| {
            solve_hmm(&HmmConfig {
                domain: BoxDomain::unit_cube(),
                macro_n: n,
                micro_n: 2,
                coeffs: coeffs.clone(),
                source: SourceField::mms(k0),
                delta: 1.0,
            })
            .unwrap()
        };
        let (c, r) = (mk(2), mk(8));
        let e = error_triple(&c, &r).unwrap();
        let s = energy_norm_diff(
            &TwoScaleField::edge(r.field.clone()),
            &TwoScaleField::edge(c.field.clone()),
            &r.space.mesh,
            r.micro(),
        )
        .unwrap();
        assert!((e.total - s.total).abs() < 0.05 * s.total);
    }

    #[test]
    fn mms_errors_decrease() {
        let rows = mms_reference(LOSS_FACTOR, &[2, 4], 2, 2).unwrap();
        assert!(rows[1].hcurl < rows[0].hcurl);
        assert!(rows[1].interpolation_hcurl < rows[0].interpolation_hcurl);
    }

    #[test]
    fn helmholtz_split_of_gradients_and_curls() {
        let mesh = build_box_mesh(BoxDomain::unit_cube(), 4).unwrap();
        // e = grad theta0 for a P1 theta0 vanishing on the boundary.
        let theta0 = |x: Vec3| {
            if (x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12 && (x[2] - 0.5).abs() < 1e-12 {
                1.0
            } else {
                0.0
            }
        };
        let vals: Vec<f64> = mesh.vertices.iter().map(|x| theta0(*x)).collect();
        let e = |x: Vec3| -> CVec3 {
            let (t, _) = mesh.locate(x).unwrap();
            let g = &mesh.grads[t];
            let mut out = CZERO3;
            for a in 0..4 {
                for c in 0..3 {
                    out[c] += Complex64::from(vals[mesh.tets[t][a]] * g[a][c]);
                }
            }
            out
        };
        let z = helmholtz_split(&e, &mesh).unwrap().z;
        assert!(z < 1e-9, "{z}");
        // A rotation field is nearly divergence free: small theta.
        let fine = build_box_mesh(BoxDomain::unit_cube(), 8).unwrap();
        let space = Arc::new(EdgeSpace::new(Arc::new(fine.clone())));
        let rot = EdgeField::from_all_edges(
            space.clone(),
            space.interpolate_all_edges(|x| [Complex64::from(-(x[1] - 0.5)), Complex64::from(x[0] - 0.5), CZERO]),
        );
        let e2 = |x: Vec3| rot.evaluate(x).unwrap().0;
        let sp = helmholtz_split(&e2, &fine).unwrap();
        let (t2, z2) = (sp.theta, sp.z);
        assert!(t2 <= 0.1 * z2, "{t2} vs {z2}");
    }

    #[test]
    fn fine_solver_guard_and_linearity() {
        let lam = CoefficientField::laminate(2.0, 1.0, 0).unwrap();
        let f = SourceField::SinE1 { amp: Complex64::from(1.0) };
        let d = BoxDomain::unit_cube();
        assert!(matches!(
            solve_direct_fine(&lam, 0.5, &f, d, 3, RESOLUTION_GUARD),
            Err(Error::Resolution { given: 3, required: 16 })
        ));
        let a = solve_direct_fine(&lam, 0.5, &f, d, 8, 4.0).unwrap();
        let b = solve_direct_fine(&lam, 0.5, &f.scaled(2.0), d, 8, 4.0).unwrap();
        assert!(a.residual <= 1e-10);
        for (x, y) in a.dofs.iter().zip(&b.dofs) {
            assert!((y - 2.0 * x).norm() < 1e-12 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn fine_solver_constant_and_shifted_phase() {
        let f = SourceField::SinE1 { amp: Complex64::from(1.0) };
        let d = BoxDomain::unit_cube();
        let c = CoefficientField::constant(1.0, LOSS_FACTOR).unwrap();
        let a = solve_direct_fine(&c, 0.5, &f, d, 4, 2.0).unwrap();
        let b = solve_direct_fine(&c, 0.25, &f, d, 4, 1.0).unwrap();
        for (x, y) in a.dofs.iter().zip(&b.dofs) {
            assert!((x - y).norm() < 1e-12);
        }
        let lam = CoefficientField::laminate(2.0, 1.0, 0).unwrap();
        let p = solve_direct_fine(&lam, 0.5, &f, d, 8, 4.0).unwrap();
        let q = solve_direct_fine_shifted(&lam, 0.5, [0.25, 0.0, 0.0], &f, d, 8, 4.0).unwrap();
        let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let diff: Vec<Complex64> = p.dofs.iter().zip(&q.dofs).map(|(x, y)| x - y).collect();
        assert!(norm(&diff) > 1e-6 * norm(&p.dofs));
        let r = norm(&p.dofs) / norm(&q.dofs);
        assert!((0.5..2.0).contains(&r));
    }

    #[test]
    fn modeling_error_is_finite() {
        let lam = CoefficientField::laminate(2.0, 1.0, 0).unwrap();
        let f = SourceField::SinE1 { amp: Complex64::from(1.0) };
        let d = BoxDomain::unit_cube();
        let fine = solve_direct_fine(&lam, 0.5, &f, d, 8, 4.0).unwrap();
        let mac = Arc::new(build_box_mesh(d, 2).unwrap());
        let micro = Arc::new(build_periodic_cube_mesh(4).unwrap());
        let cells = Arc::new(homogenize_all(&mac, micro, &lam).unwrap());
        let hmm = solve_macro(Arc::new(EdgeSpace::new(mac)), cells, lam, f, 0.5).unwrap();
        let (l2, curl) = modeling_error(&fine, &hmm).unwrap();
        assert!(l2.is_finite() && curl.is_finite() && l2 > 0.0);
    }
}
