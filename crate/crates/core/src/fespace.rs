//! Finite element spaces: lowest-order Nedelec edge elements on the macro
//! mesh and periodic P1 Lagrange functions on the micro mesh.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geom::{cross, dot, scale, sub, CVec3, Vec3, CZERO, CZERO3};
use crate::mesh::{MacroMesh, PeriodicMicroMesh, TetMesh, LOCAL_EDGES};
use crate::quadrature::{gauss_legendre_unit, tet_rule};

pub type Mat6 = [[Complex64; 6]; 6];

/// Values of the six signed Whitney edge functions at barycentric point `l`.
pub fn n0_values(grads: &[Vec3; 4], signs: &[f64; 6], l: &[f64; 4]) -> [Vec3; 6] {
    let mut out = [[0.0; 3]; 6];
    for (e, [a, b]) in LOCAL_EDGES.iter().enumerate() {
        let v = sub(scale(l[*a], grads[*b]), scale(l[*b], grads[*a]));
        out[e] = scale(signs[e], v);
    }
    out
}

/// Constant curls of the six signed Whitney edge functions.
pub fn n0_curls(grads: &[Vec3; 4], signs: &[f64; 6]) -> [Vec3; 6] {
    let mut out = [[0.0; 3]; 6];
    for (e, [a, b]) in LOCAL_EDGES.iter().enumerate() {
        out[e] = scale(2.0 * signs[e], cross(grads[*a], grads[*b]));
    }
    out
}

/// Local curl-curl and mass matrices of tet `t` scaled by `weight`.
///
/// The mass matrix uses the degree-2 rule, which is exact for products of
/// two Nedelec functions.
pub fn n0_local_matrices(
    mesh: &TetMesh,
    t: usize,
    signs: &[f64; 6],
    weight: Complex64,
) -> Result<(Mat6, Mat6)> {
    let vol = mesh.volumes[t];
    if !(vol > 0.0) {
        return Err(Error::DegenerateTet(t));
    }
    let g = &mesh.grads[t];
    let curls = n0_curls(g, signs);
    let mut cc = [[CZERO; 6]; 6];
    let mut mass = [[CZERO; 6]; 6];
    for a in 0..6 {
        for b in 0..6 {
            cc[a][b] = weight * (vol * dot(curls[a], curls[b]));
        }
    }
    let rule = tet_rule(2).expect("degree-2 rule");
    let mut m = [[0.0; 6]; 6];
    for (p, w) in rule.iter() {
        let phi = n0_values(g, signs, p);
        for a in 0..6 {
            for b in 0..6 {
                m[a][b] += w * vol * dot(phi[a], phi[b]);
            }
        }
    }
    for a in 0..6 {
        for b in 0..6 {
            mass[a][b] = weight * m[a][b];
        }
    }
    Ok((cc, mass))
}

/// Lowest-order Nedelec space with zero tangential trace on the boundary.
#[derive(Clone, Debug)]
pub struct EdgeSpace {
    pub mesh: Arc<MacroMesh>,
    /// Free DOF index of each edge; boundary edges carry none.
    pub dof_of_edge: Vec<Option<usize>>,
    pub n_dofs: usize,
    /// Orientation of each local edge relative to the global lower-to-higher
    /// vertex direction.
    pub signs: Vec<[f64; 6]>,
    pub n_constrained: usize,
}

impl EdgeSpace {
    pub fn new(mesh: Arc<MacroMesh>) -> Self {
        let mut dof_of_edge = vec![None; mesh.edges.len()];
        let mut n_dofs = 0;
        for (e, d) in dof_of_edge.iter_mut().enumerate() {
            if !mesh.edge_boundary[e] {
                *d = Some(n_dofs);
                n_dofs += 1;
            }
        }
        let signs = mesh
            .tets
            .iter()
            .map(|v| {
                let mut s = [0.0; 6];
                for (e, [a, b]) in LOCAL_EDGES.iter().enumerate() {
                    s[e] = if v[*a] < v[*b] { 1.0 } else { -1.0 };
                }
                s
            })
            .collect();
        let n_constrained = mesh.edges.len() - n_dofs;
        Self {
            mesh,
            dof_of_edge,
            n_dofs,
            signs,
            n_constrained,
        }
    }

    /// Local-to-global DOF map of tet `t` (`None` for boundary edges).
    pub fn local_dofs(&self, t: usize) -> [Option<usize>; 6] {
        let e = &self.mesh.tet_edges[t];
        std::array::from_fn(|i| self.dof_of_edge[e[i]])
    }

    /// Edge DOFs `int_e u . t ds` of a field, for every mesh edge (tangent from
    /// the lower to the higher vertex id).
    pub fn interpolate_all_edges<F>(&self, f: F) -> Vec<Complex64>
    where
        F: Fn(Vec3) -> CVec3,
    {
        let (xs, ws) = gauss_legendre_unit();
        self.mesh
            .edges
            .iter()
            .map(|[a, b]| {
                let pa = self.mesh.vertices[*a];
                let t = sub(self.mesh.vertices[*b], pa);
                let mut s = CZERO;
                for q in 0..3 {
                    let x = [pa[0] + xs[q] * t[0], pa[1] + xs[q] * t[1], pa[2] + xs[q] * t[2]];
                    let v = f(x);
                    s += (v[0] * t[0] + v[1] * t[1] + v[2] * t[2]) * ws[q];
                }
                s
            })
            .collect()
    }

    /// Interpolant restricted to the free DOFs (boundary values dropped).
    pub fn interpolate<F>(&self, f: F) -> Vec<Complex64>
    where
        F: Fn(Vec3) -> CVec3,
    {
        let all = self.interpolate_all_edges(f);
        self.restrict(&all)
    }

    pub fn restrict(&self, all: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![CZERO; self.n_dofs];
        for (e, d) in self.dof_of_edge.iter().enumerate() {
            if let Some(d) = d {
                out[*d] = all[e];
            }
        }
        out
    }

    /// Expands free DOFs to one value per edge, zero on the boundary.
    pub fn extend(&self, dofs: &[Complex64]) -> Vec<Complex64> {
        self.dof_of_edge
            .iter()
            .map(|d| d.map_or(CZERO, |d| dofs[d]))
            .collect()
    }
}

/// An edge-element field given by one coefficient per mesh edge.
#[derive(Clone, Debug)]
pub struct EdgeField {
    pub space: Arc<EdgeSpace>,
    pub edge_values: Vec<Complex64>,
}

impl EdgeField {
    pub fn from_dofs(space: Arc<EdgeSpace>, dofs: &[Complex64]) -> Self {
        let edge_values = space.extend(dofs);
        Self { space, edge_values }
    }

    pub fn from_all_edges(space: Arc<EdgeSpace>, edge_values: Vec<Complex64>) -> Self {
        Self { space, edge_values }
    }

    /// Signed local coefficients of tet `t`.
    pub fn local(&self, t: usize) -> [Complex64; 6] {
        let e = &self.space.mesh.tet_edges[t];
        std::array::from_fn(|i| self.edge_values[e[i]])
    }

    /// Value inside tet `t` at barycentric point `l`.
    pub fn value_in(&self, t: usize, l: &[f64; 4]) -> CVec3 {
        let mesh = &self.space.mesh;
        let phi = n0_values(&mesh.grads[t], &self.space.signs[t], l);
        let c = self.local(t);
        let mut v = CZERO3;
        for e in 0..6 {
            for k in 0..3 {
                v[k] += c[e] * phi[e][k];
            }
        }
        v
    }

    /// Constant curl on tet `t`.
    pub fn curl_in(&self, t: usize) -> CVec3 {
        let mesh = &self.space.mesh;
        let curls = n0_curls(&mesh.grads[t], &self.space.signs[t]);
        let c = self.local(t);
        let mut v = CZERO3;
        for e in 0..6 {
            for k in 0..3 {
                v[k] += c[e] * curls[e][k];
            }
        }
        v
    }

    /// Divergence on tet `t`; identically zero for Nedelec fields.
    pub fn div_in(&self, t: usize) -> Complex64 {
        let g = &self.space.mesh.grads[t];
        let s = &self.space.signs[t];
        let c = self.local(t);
        let mut d = CZERO;
        for (e, [a, b]) in LOCAL_EDGES.iter().enumerate() {
            d += c[e] * (s[e] * (dot(g[*a], g[*b]) - dot(g[*b], g[*a])));
        }
        d
    }

    /// Value and curl at a physical point.
    pub fn evaluate(&self, x: Vec3) -> Result<(CVec3, CVec3)> {
        let (t, l) = self.space.mesh.locate(x)?;
        Ok((self.value_in(t, &l), self.curl_in(t)))
    }
}

/// Evaluates the edge field given by free DOFs at `x`: value and curl.
pub fn evaluate_edge_field(
    space: &Arc<EdgeSpace>,
    dofs: &[Complex64],
    x: Vec3,
) -> Result<(CVec3, CVec3)> {
    EdgeField::from_dofs(space.clone(), dofs).evaluate(x)
}

/// P1 stiffness (`weight |T| grad l_a . grad l_b`) and the gradient coupling
/// `weight |T| (e_k . grad l_a)` of tet `t`.
pub fn p1_local_matrices(
    mesh: &TetMesh,
    t: usize,
    weight: Complex64,
) -> Result<([[Complex64; 4]; 4], [[Complex64; 3]; 4])> {
    let vol = mesh.volumes[t];
    if !(vol > 0.0) {
        return Err(Error::DegenerateTet(t));
    }
    let g = &mesh.grads[t];
    let mut k = [[CZERO; 4]; 4];
    let mut c = [[CZERO; 3]; 4];
    for a in 0..4 {
        for b in 0..4 {
            k[a][b] = weight * (vol * dot(g[a], g[b]));
        }
        for d in 0..3 {
            c[a][d] = weight * (vol * g[a][d]);
        }
    }
    Ok((k, c))
}

/// Rows of the curl operator on a vector P1 field: `curl u = B u` with the
/// local unknown `3a + c` being component `c` at vertex `a`.
pub fn vector_p1_curl_rows(g: &[Vec3; 4]) -> [[f64; 12]; 3] {
    let mut b = [[0.0; 12]; 3];
    for a in 0..4 {
        // curl(l_a e_c) = grad l_a x e_c
        let ga = g[a];
        b[0][3 * a + 1] = -ga[2];
        b[0][3 * a + 2] = ga[1];
        b[1][3 * a] = ga[2];
        b[1][3 * a + 2] = -ga[0];
        b[2][3 * a] = -ga[1];
        b[2][3 * a + 1] = ga[0];
    }
    b
}

/// Row of the divergence operator on a vector P1 field.
pub fn vector_p1_div_row(g: &[Vec3; 4]) -> [f64; 12] {
    let mut r = [0.0; 12];
    for a in 0..4 {
        for c in 0..3 {
            r[3 * a + c] = g[a][c];
        }
    }
    r
}

pub type Mat12 = [[f64; 12]; 12];

/// Local matrices of the divergence-regularized vector cell form on tet `t`:
/// curl-curl weighted by `weight`, div-div with unit weight, and the load
/// columns `-int weight e_k . curl psi`.
pub fn vector_p1_local_matrices(
    mesh: &TetMesh,
    t: usize,
    weight: f64,
) -> Result<(Mat12, Mat12, [[f64; 3]; 12])> {
    let vol = mesh.volumes[t];
    if !(vol > 0.0) {
        return Err(Error::DegenerateTet(t));
    }
    let g = &mesh.grads[t];
    let b = vector_p1_curl_rows(g);
    let d = vector_p1_div_row(g);
    let mut cc = [[0.0; 12]; 12];
    let mut dd = [[0.0; 12]; 12];
    let mut rhs = [[0.0; 3]; 12];
    for i in 0..12 {
        for j in 0..12 {
            let mut s = 0.0;
            for r in 0..3 {
                s += b[r][i] * b[r][j];
            }
            cc[i][j] = weight * vol * s;
            dd[i][j] = vol * d[i] * d[j];
        }
        for k in 0..3 {
            rhs[i][k] = -weight * vol * b[k][i];
        }
    }
    Ok((cc, dd, rhs))
}

/// Periodic zero-mean P1 space on the micro mesh; one unknown per master vertex.
#[derive(Clone, Debug)]
pub struct PeriodicScalarSpace {
    pub mesh: Arc<PeriodicMicroMesh>,
    /// `int_Y phi_a dy` for each master vertex: the zero-mean constraint row.
    pub mean_weights: Vec<f64>,
}

impl PeriodicScalarSpace {
    pub fn new(mesh: Arc<PeriodicMicroMesh>) -> Self {
        let mut mean_weights = vec![0.0; mesh.n_masters()];
        for t in 0..mesh.n_tets() {
            for m in mesh.tet_masters(t) {
                mean_weights[m] += 0.25 * mesh.volumes[t];
            }
        }
        Self { mesh, mean_weights }
    }

    pub fn n_dofs(&self) -> usize {
        self.mean_weights.len()
    }

    /// `int_Y u dy` of a P1 function.
    pub fn mean<T>(&self, u: &[T]) -> T
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::iter::Sum<T>,
    {
        u.iter().zip(&self.mean_weights).map(|(&v, &w)| v * w).sum()
    }

    /// Constant gradient of a P1 function on tet `t`.
    pub fn gradient<T>(&self, u: &[T], t: usize) -> [T; 3]
    where
        T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        let g = &self.mesh.grads[t];
        let m = self.mesh.tet_masters(t);
        let mut out = [T::default(); 3];
        for a in 0..4 {
            for c in 0..3 {
                out[c] = out[c] + u[m[a]] * g[a][c];
            }
        }
        out
    }

    /// Value at a point of the torus.
    pub fn value<T>(&self, u: &[T], y: Vec3) -> T
    where
        T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        let (t, l) = self.mesh.locate_periodic(y);
        let m = self.mesh.tet_masters(t);
        let mut v = T::default();
        for a in 0..4 {
            v = v + u[m[a]] * l[a];
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{cnorm_sqr, csub, norm};
    use crate::mesh::{build_box_mesh, build_periodic_cube_mesh, BoxDomain, LOCAL_FACES};
    use crate::quadrature::triangle_rule_degree2;

    fn reference_tet_mesh() -> TetMesh {
        // Tet 0 of the unit cube mesh: a Kuhn tetrahedron.
        (*build_box_mesh(BoxDomain::unit_cube(), 1).unwrap()).clone()
    }

    fn eig_rank(m: &[[f64; 6]; 6]) -> usize {
        // Gaussian elimination with full pivoting on a small symmetric matrix.
        let mut a = *m;
        let mut rank = 0;
        let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
        let mut used_r = [false; 6];
        let mut used_c = [false; 6];
        for _ in 0..6 {
            let mut best = (0, 0, 0.0);
            for i in 0..6 {
                for j in 0..6 {
                    if !used_r[i] && !used_c[j] && a[i][j].abs() > best.2 {
                        best = (i, j, a[i][j].abs());
                    }
                }
            }
            if best.2 < 1e-12 * scale {
                break;
            }
            let (p, q, _) = best;
            used_r[p] = true;
            used_c[q] = true;
            rank += 1;
            for i in 0..6 {
                if i != p {
                    let f = a[i][q] / a[p][q];
                    for j in 0..6 {
                        a[i][j] -= f * a[p][j];
                    }
                }
            }
        }
        rank
    }

    #[test]
    fn curl_curl_has_rank_three() {
        let m = reference_tet_mesh();
        let (cc, mass) = n0_local_matrices(&m, 0, &[1.0; 6], Complex64::new(1.0, 0.0)).unwrap();
        let re = cc.map(|r| r.map(|v| v.re));
        assert_eq!(eig_rank(&re), 3);
        let mr = mass.map(|r| r.map(|v| v.re));
        assert_eq!(eig_rank(&mr), 6);
        for a in 0..6 {
            for b in 0..6 {
                assert!((cc[a][b] - cc[b][a]).norm() < 1e-15);
                assert!((mass[a][b] - mass[b][a]).norm() < 1e-15);
            }
        }
        let (cc0, _) = n0_local_matrices(&m, 0, &[1.0; 6], CZERO).unwrap();
        assert!(cc0.iter().flatten().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn mass_row_sums_match_degree4_quadrature() {
        let m = reference_tet_mesh();
        let signs = [1.0; 6];
        let (_, mass) = n0_local_matrices(&m, 2, &signs, Complex64::new(1.0, 0.0)).unwrap();
        // Row sums equal int_T phi_a . sum_b phi_b, computed here with the degree-4 rule.
        let rule = tet_rule(4).unwrap();
        for a in 0..6 {
            let mut s = 0.0;
            for (p, w) in rule.iter() {
                let phi = n0_values(&m.grads[2], &signs, p);
                let mut tot = [0.0; 3];
                for b in 0..6 {
                    for k in 0..3 {
                        tot[k] += phi[b][k];
                    }
                }
                s += w * m.volumes[2] * dot(phi[a], tot);
            }
            let row: f64 = mass[a].iter().map(|v| v.re).sum();
            assert!((row - s).abs() < 1e-14);
        }
    }

    #[test]
    fn whitney_dofs_are_dual_to_edges() {
        let m = build_box_mesh(BoxDomain::unit_cube(), 2).unwrap();
        let t = 7;
        let p = m.tet_points(t);
        let signs = [1.0; 6];
        for (e, [a, b]) in LOCAL_EDGES.iter().enumerate() {
            let tangent = sub(p[*b], p[*a]);
            for (f, _) in LOCAL_EDGES.iter().enumerate() {
                let mut l = [0.0; 4];
                l[*a] = 0.5;
                l[*b] = 0.5;
                let phi = n0_values(&m.grads[t], &signs, &l);
                let v = dot(phi[f], tangent);
                let expect = if e == f { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12, "edge {e} fn {f}: {v}");
            }
        }
    }

    #[test]
    fn patch_test_reproduces_affine_curl_fields() {
        let mesh = Arc::new(build_box_mesh(BoxDomain::unit_cube(), 3).unwrap());
        let space = Arc::new(EdgeSpace::new(mesh.clone()));
        let a = [0.3, -1.2, 0.7];
        let b = [Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.0), Complex64::new(0.0, 1.0)];
        let field = |x: Vec3| {
            let c = cross(a, x);
            [b[0] + c[0], b[1] + c[1], b[2] + c[2]]
        };
        let all = space.interpolate_all_edges(field);
        let f = EdgeField::from_all_edges(space.clone(), all);
        for t in (0..mesh.n_tets()).step_by(7) {
            for l in [[0.25; 4], [0.1, 0.2, 0.3, 0.4], [0.7, 0.1, 0.1, 0.1]] {
                let x = mesh.point_from_barycentric(t, l);
                let v = f.value_in(t, &l);
                assert!(cnorm_sqr(csub(v, field(x))).sqrt() < 1e-12);
            }
            let c = f.curl_in(t);
            for k in 0..3 {
                assert!((c[k] - Complex64::from(2.0 * a[k])).norm() < 1e-12);
            }
            assert_eq!(f.div_in(t), CZERO);
        }
    }

    #[test]
    fn edge_field_examples() {
        let mesh = Arc::new(build_box_mesh(BoxDomain::unit_cube(), 2).unwrap());
        let space = Arc::new(EdgeSpace::new(mesh.clone()));
        let zero = vec![CZERO; space.n_dofs];
        let (v, c) = evaluate_edge_field(&space, &zero, [0.3, 0.4, 0.5]).unwrap();
        assert_eq!(v, CZERO3);
        assert_eq!(c, CZERO3);
        // e3 x x has curl 2 e3.
        let all = space.interpolate_all_edges(|x| crate::geom::to_complex(cross([0.0, 0.0, 1.0], x)));
        let f = EdgeField::from_all_edges(space.clone(), all);
        let (_, c) = f.evaluate([0.31, 0.72, 0.45]).unwrap();
        assert!((c[2] - Complex64::from(2.0)).norm() < 1e-12);
        assert!(c[0].norm() < 1e-12 && c[1].norm() < 1e-12);
        assert!(f.evaluate([2.0, 0.0, 0.0]).is_err());
        // Constant field: value b, zero curl.
        let bconst = [Complex64::new(0.5, -1.0), CZERO, Complex64::from(2.0)];
        let f = EdgeField::from_all_edges(space.clone(), space.interpolate_all_edges(|_| bconst));
        let (v, c) = f.evaluate([0.9, 0.1, 0.6]).unwrap();
        assert!(cnorm_sqr(csub(v, bconst)).sqrt() < 1e-12);
        assert!(cnorm_sqr(c).sqrt() < 1e-12);
    }

    #[test]
    fn boundary_edges_carry_no_dofs() {
        let mesh = Arc::new(build_box_mesh(BoxDomain::unit_cube(), 2).unwrap());
        let space = EdgeSpace::new(mesh.clone());
        assert_eq!(space.n_constrained, mesh.n_boundary_edges());
        for (e, [a, b]) in mesh.edges.iter().enumerate() {
            let pa = mesh.vertices[*a];
            let pb = mesh.vertices[*b];
            let on_plane = (0..3).any(|k| {
                (pa[k] == 0.0 && pb[k] == 0.0) || (pa[k] == 1.0 && pb[k] == 1.0)
            });
            assert_eq!(space.dof_of_edge[e].is_none(), on_plane);
        }
    }

    #[test]
    fn basis_functions_are_tangentially_continuous() {
        let mesh = Arc::new(build_box_mesh(BoxDomain::unit_cube(), 2).unwrap());
        let space = Arc::new(EdgeSpace::new(mesh.clone()));
        let (tp, _) = triangle_rule_degree2();
        for d in (0..space.n_dofs).step_by(3) {
            let mut dofs = vec![CZERO; space.n_dofs];
            dofs[d] = Complex64::from(1.0);
            let f = EdgeField::from_dofs(space.clone(), &dofs);
            for face in mesh.faces.iter().filter(|f| f.is_interior()) {
                let (nb, _) = face.neighbor.unwrap();
                let lv = LOCAL_FACES[face.owner_local];
                let ov = mesh.tets[face.owner];
                for q in &tp {
                    let mut lo = [0.0; 4];
                    for i in 0..3 {
                        lo[lv[i]] = q[i];
                    }
                    let x = mesh.point_from_barycentric(face.owner, lo);
                    let _ = ov;
                    let ln = mesh.barycentric(nb, x);
                    let jump = csub(f.value_in(face.owner, &lo), f.value_in(nb, &ln));
                    let t = crate::geom::ccross_real(jump, face.normal);
                    assert!(cnorm_sqr(t).sqrt() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn p1_local_matrix_properties() {
        let m = build_box_mesh(BoxDomain::unit_cube(), 2).unwrap();
        for t in [0, 5, 17] {
            let (k, c) = p1_local_matrices(&m, t, Complex64::from(1.0)).unwrap();
            for a in 0..4 {
                let s: Complex64 = k[a].iter().sum();
                assert!(s.norm() < 1e-14);
            }
            for d in 0..3 {
                let s: Complex64 = (0..4).map(|a| c[a][d]).sum();
                assert!(s.norm() < 1e-14);
            }
            let tr: f64 = (0..4).map(|a| k[a][a].re).sum();
            assert!(tr > 0.0);
        }
    }

    #[test]
    fn vector_p1_kernels() {
        let m = build_box_mesh(BoxDomain::unit_cube(), 2).unwrap();
        let t = 9;
        let (cc, dd, _) = vector_p1_local_matrices(&m, t, 1.0).unwrap();
        // Rigid translations.
        for c in 0..3 {
            let mut u = [0.0; 12];
            for a in 0..4 {
                u[3 * a + c] = 1.0;
            }
            for i in 0..12 {
                let s: f64 = (0..12).map(|j| (cc[i][j] + dd[i][j]) * u[j]).sum();
                assert!(s.abs() < 1e-13);
            }
        }
        // Nodal interpolant of a gradient of a quadratic: u = grad(x^T Q x / 2) = Q x.
        let q = [[1.0, 0.3, -0.2], [0.3, 2.0, 0.5], [-0.2, 0.5, -1.0]];
        let p = m.tet_points(t);
        let mut u = [0.0; 12];
        for a in 0..4 {
            for c in 0..3 {
                u[3 * a + c] = (0..3).map(|k| q[c][k] * p[a][k]).sum();
            }
        }
        for i in 0..12 {
            let s: f64 = (0..12).map(|j| cc[i][j] * u[j]).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn vector_rhs_sums_to_zero_on_the_torus() {
        let mesh = Arc::new(build_periodic_cube_mesh(3).unwrap());
        let nm = mesh.n_masters();
        // A periodic P1 vector field with pseudo-random master values.
        let psi: Vec<f64> = (0..3 * nm).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect();
        let mut tot = [0.0; 3];
        for t in 0..mesh.n_tets() {
            let (_, _, rhs) = vector_p1_local_matrices(&mesh, t, 1.0).unwrap();
            let ms = mesh.tet_masters(t);
            for a in 0..4 {
                for c in 0..3 {
                    for k in 0..3 {
                        tot[k] += rhs[3 * a + c][k] * psi[3 * ms[a] + c];
                    }
                }
            }
        }
        for k in 0..3 {
            assert!(tot[k].abs() < 1e-13, "{tot:?}");
        }
    }

    #[test]
    fn periodic_scalar_space_basics() {
        let mesh = Arc::new(build_periodic_cube_mesh(3).unwrap());
        let space = PeriodicScalarSpace::new(mesh.clone());
        let tot: f64 = space.mean_weights.iter().sum();
        assert!((tot - 1.0).abs() < 1e-14);
        // A P1 function is continuous across periodic copies.
        let u: Vec<f64> = (0..space.n_dofs()).map(|i| (i as f64 * 0.7).sin()).collect();
        for (a, b) in [([-0.5, 0.1, 0.2], [0.5, 0.1, 0.2]), ([0.2, -0.5, -0.5], [0.2, 0.5, 0.5])] {
            assert!((space.value(&u, a) - space.value(&u, b)).abs() < 1e-14);
        }
        let g = space.gradient(&vec![1.0; space.n_dofs()], 4);
        assert!(norm(g) < 1e-13);
    }
}
