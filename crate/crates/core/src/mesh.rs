//! Structured Kuhn (Freudenthal) tetrahedral meshes of a box and of the
//! periodic unit cell `Y = [-1/2, 1/2)^3`.
//!
//! Every cube of an `n x n x n` lattice is split into the six tetrahedra that
//! share its main diagonal. The family is nested under uniform refinement and
//! all tetrahedra are congruent up to reflection.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::geom::{cross, dot, inverse3, norm, sub, Vec3};

/// Local vertex pairs of the six tetrahedron edges.
pub const LOCAL_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];

/// Local vertices of the face opposite to vertex `a`.
pub const LOCAL_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

/// Axis orderings walked from the lower corner to the upper corner of a cube.
const KUHN_PATHS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxDomain {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl BoxDomain {
    pub fn new(lo: Vec3, hi: Vec3) -> Result<Self> {
        for a in 0..3 {
            if !(hi[a] - lo[a] > 0.0) || !lo[a].is_finite() || !hi[a].is_finite() {
                return Err(Error::InvalidMesh(format!(
                    "degenerate box extent along axis {a}: [{}, {}]",
                    lo[a], hi[a]
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn unit_cube() -> Self {
        Self {
            lo: [0.0; 3],
            hi: [1.0; 3],
        }
    }

    pub fn unit_cell() -> Self {
        Self {
            lo: [-0.5; 3],
            hi: [0.5; 3],
        }
    }

    pub fn extent(&self) -> Vec3 {
        sub(self.hi, self.lo)
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1] * e[2]
    }
}

/// A triangular face with its incident tetrahedra.
///
/// `owner` is the lower tet id. The normal points from owner to neighbor,
/// outward on the boundary. Jumps are `owner value - neighbor value`.
#[derive(Clone, Debug)]
pub struct Face {
    pub vertices: [usize; 3],
    pub owner: usize,
    pub owner_local: usize,
    pub neighbor: Option<(usize, usize)>,
    pub area: f64,
    pub diameter: f64,
    pub normal: Vec3,
}

impl Face {
    pub fn is_interior(&self) -> bool {
        self.neighbor.is_some()
    }
}

/// Geometry and topology shared by the macro and micro meshes.
#[derive(Clone, Debug)]
pub struct TetMesh {
    pub domain: BoxDomain,
    /// Subdivisions per axis.
    pub n: usize,
    pub vertices: Vec<Vec3>,
    /// Positively oriented vertex quadruples.
    pub tets: Vec<[usize; 4]>,
    /// Edges as (lower, higher) vertex ids; on the periodic mesh one
    /// representative per identified edge.
    pub edges: Vec<[usize; 2]>,
    pub edge_boundary: Vec<bool>,
    pub faces: Vec<Face>,
    pub tet_edges: Vec<[usize; 6]>,
    pub tet_faces: Vec<[usize; 4]>,
    pub barycenters: Vec<Vec3>,
    pub volumes: Vec<f64>,
    pub diameters: Vec<f64>,
    /// Gradients of the barycentric coordinates, constant per tet.
    pub grads: Vec<[Vec3; 4]>,
}

impl TetMesh {
    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Lattice cube edge lengths.
    pub fn cell_size(&self) -> Vec3 {
        let e = self.domain.extent();
        [
            e[0] / self.n as f64,
            e[1] / self.n as f64,
            e[2] / self.n as f64,
        ]
    }

    /// Global mesh size `max_j diam(T_j)`.
    pub fn max_diameter(&self) -> f64 {
        self.diameters.iter().copied().fold(0.0, f64::max)
    }

    pub fn tet_points(&self, t: usize) -> [Vec3; 4] {
        let v = &self.tets[t];
        [
            self.vertices[v[0]],
            self.vertices[v[1]],
            self.vertices[v[2]],
            self.vertices[v[3]],
        ]
    }

    /// Radius of the inscribed sphere, `3|T| / surface area`.
    pub fn inradius(&self, t: usize) -> f64 {
        let area: f64 = self.tet_faces[t].iter().map(|&f| self.faces[f].area).sum();
        3.0 * self.volumes[t] / area
    }

    /// Barycentric coordinates of `x` with respect to tet `t` (unclamped).
    pub fn barycentric(&self, t: usize, x: Vec3) -> [f64; 4] {
        let d = sub(x, self.barycenters[t]);
        let g = &self.grads[t];
        [
            0.25 + dot(g[0], d),
            0.25 + dot(g[1], d),
            0.25 + dot(g[2], d),
            0.25 + dot(g[3], d),
        ]
    }

    /// Physical point from barycentric coordinates.
    pub fn point_from_barycentric(&self, t: usize, lambda: [f64; 4]) -> Vec3 {
        let p = self.tet_points(t);
        let mut x = [0.0; 3];
        for a in 0..4 {
            for c in 0..3 {
                x[c] += lambda[a] * p[a][c];
            }
        }
        x
    }

    /// Locates the tet containing `x` by cube lookup and a scan of its six
    /// tets. Points within a small tolerance of the box are clamped to it.
    pub fn locate(&self, x: Vec3) -> Result<(usize, [f64; 4])> {
        let e = self.domain.extent();
        let h = self.cell_size();
        let mut cube = [0usize; 3];
        for a in 0..3 {
            let tol = 1e-12 * e[a].max(1.0);
            if !(x[a] >= self.domain.lo[a] - tol && x[a] <= self.domain.hi[a] + tol) {
                return Err(Error::OutOfDomain(x));
            }
            let s = ((x[a] - self.domain.lo[a]) / h[a]).floor();
            cube[a] = (s.max(0.0) as usize).min(self.n - 1);
        }
        let c = cube[0] + self.n * (cube[1] + self.n * cube[2]);
        let mut best = (6 * c, [0.0; 4], f64::NEG_INFINITY);
        for t in 6 * c..6 * c + 6 {
            let l = self.barycentric(t, x);
            let m = l.iter().copied().fold(f64::INFINITY, f64::min);
            if m > best.2 {
                best = (t, l, m);
            }
        }
        let (t, mut l, _) = best;
        for v in l.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        let s: f64 = l.iter().sum();
        for v in l.iter_mut() {
            *v /= s;
        }
        Ok((t, l))
    }
}

/// Macro mesh of a box domain `Omega`.
#[derive(Clone, Debug)]
pub struct MacroMesh {
    inner: TetMesh,
}

impl Deref for MacroMesh {
    type Target = TetMesh;
    fn deref(&self) -> &TetMesh {
        &self.inner
    }
}

impl MacroMesh {
    pub fn interior_faces(&self) -> impl Iterator<Item = (usize, &Face)> {
        self.faces.iter().enumerate().filter(|(_, f)| f.is_interior())
    }

    pub fn n_boundary_edges(&self) -> usize {
        self.edge_boundary.iter().filter(|&&b| b).count()
    }
}

/// Periodic micro mesh of the unit cell `Y`.
///
/// Vertices on the faces `y_a = +1/2` are kept as geometric copies and mapped
/// to a master vertex at `y_a = -1/2`; faces and edges are identified under
/// the same lattice translations, so every face is interior.
#[derive(Clone, Debug)]
pub struct PeriodicMicroMesh {
    inner: TetMesh,
    /// Master vertex of each lattice vertex, in `0..n^3`.
    pub master: Vec<usize>,
}

impl Deref for PeriodicMicroMesh {
    type Target = TetMesh;
    fn deref(&self) -> &TetMesh {
        &self.inner
    }
}

impl PeriodicMicroMesh {
    pub fn n_masters(&self) -> usize {
        self.n * self.n * self.n
    }

    /// Master vertex ids of tet `t`.
    pub fn tet_masters(&self, t: usize) -> [usize; 4] {
        let v = &self.tets[t];
        [
            self.master[v[0]],
            self.master[v[1]],
            self.master[v[2]],
            self.master[v[3]],
        ]
    }

    /// Wraps `y` into `[-1/2, 1/2)^3`.
    pub fn wrap(y: Vec3) -> Vec3 {
        let mut w = [0.0; 3];
        for a in 0..3 {
            w[a] = y[a] - (y[a] + 0.5).floor();
            if w[a] >= 0.5 {
                w[a] -= 1.0;
            }
        }
        w
    }

    /// Locates a point of the torus (any representative).
    pub fn locate_periodic(&self, y: Vec3) -> (usize, [f64; 4]) {
        self.inner
            .locate(Self::wrap(y))
            .expect("wrapped point lies in the unit cell")
    }

    /// Unit lattice shift between two geometric copies of a master vertex.
    pub fn lattice_offset(&self, v: usize, w: usize) -> Option<[i64; 3]> {
        if self.master[v] != self.master[w] {
            return None;
        }
        let d = sub(self.vertices[v], self.vertices[w]);
        Some([d[0].round() as i64, d[1].round() as i64, d[2].round() as i64])
    }
}

/// Builds the Kuhn mesh of `domain` with `n` cubes per axis.
pub fn build_box_mesh(domain: BoxDomain, n: usize) -> Result<MacroMesh> {
    if n == 0 {
        return Err(Error::InvalidMesh("n must be at least 1".into()));
    }
    let domain = BoxDomain::new(domain.lo, domain.hi)?;
    Ok(MacroMesh {
        inner: build_structured(domain, n, false)?,
    })
}

/// Builds the periodic Kuhn mesh of the unit cell with `n` cubes per axis.
pub fn build_periodic_cube_mesh(n: usize) -> Result<PeriodicMicroMesh> {
    if n < 2 {
        return Err(Error::InvalidMesh(
            "periodic cell mesh needs n >= 2".into(),
        ));
    }
    let inner = build_structured(BoxDomain::unit_cell(), n, true)?;
    let np = n + 1;
    let mut master = vec![0; inner.vertices.len()];
    for k in 0..np {
        for j in 0..np {
            for i in 0..np {
                master[i + np * (j + np * k)] = (i % n) + n * ((j % n) + n * (k % n));
            }
        }
    }
    Ok(PeriodicMicroMesh { inner, master })
}

fn lattice_id(n: usize, c: [usize; 3]) -> usize {
    let np = n + 1;
    c[0] + np * (c[1] + np * c[2])
}

fn lattice_coords(n: usize, v: usize) -> [usize; 3] {
    let np = n + 1;
    [v % np, (v / np) % np, v / (np * np)]
}

/// Canonical key of an entity given by its vertices. On the periodic mesh the
/// entity is translated so that along each axis its lowest lattice coordinate
/// lies in `0..n`; translates by whole periods then share one key.
fn entity_key<const K: usize>(n: usize, verts: [usize; K], periodic: bool) -> [usize; K] {
    let mut ids = verts;
    if periodic {
        let coords: Vec<[usize; 3]> = verts.iter().map(|&v| lattice_coords(n, v)).collect();
        let mut shift = [0usize; 3];
        for a in 0..3 {
            let m = coords.iter().map(|c| c[a]).min().unwrap_or(0);
            if m == n {
                shift[a] = n;
            }
        }
        for (id, c) in ids.iter_mut().zip(&coords) {
            *id = lattice_id(n, [c[0] - shift[0], c[1] - shift[1], c[2] - shift[2]]);
        }
    }
    ids.sort_unstable();
    ids
}

fn build_structured(domain: BoxDomain, n: usize, periodic: bool) -> Result<TetMesh> {
    let np = n + 1;
    let ext = domain.extent();
    let h = [ext[0] / n as f64, ext[1] / n as f64, ext[2] / n as f64];

    let mut vertices = Vec::with_capacity(np * np * np);
    for k in 0..np {
        for j in 0..np {
            for i in 0..np {
                let c = [i, j, k];
                let mut x = [0.0; 3];
                for a in 0..3 {
                    // Exact endpoints keep boundary and periodic copies bit-identical.
                    x[a] = if c[a] == n {
                        domain.hi[a]
                    } else {
                        domain.lo[a] + c[a] as f64 * h[a]
                    };
                }
                vertices.push(x);
            }
        }
    }

    let n_tets = 6 * n * n * n;
    let mut tets = Vec::with_capacity(n_tets);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for path in KUHN_PATHS {
                    let mut c = [i, j, k];
                    let mut v = [0usize; 4];
                    v[0] = lattice_id(n, c);
                    for (s, &axis) in path.iter().enumerate() {
                        c[axis] += 1;
                        v[s + 1] = lattice_id(n, c);
                    }
                    tets.push(v);
                }
            }
        }
    }

    let mut barycenters = Vec::with_capacity(n_tets);
    let mut volumes = Vec::with_capacity(n_tets);
    let mut diameters = Vec::with_capacity(n_tets);
    let mut grads = Vec::with_capacity(n_tets);
    for (t, v) in tets.iter_mut().enumerate() {
        let mut p = [vertices[v[0]], vertices[v[1]], vertices[v[2]], vertices[v[3]]];
        let signed = dot(sub(p[1], p[0]), cross(sub(p[2], p[0]), sub(p[3], p[0])));
        if signed < 0.0 {
            v.swap(2, 3);
            p.swap(2, 3);
        }
        let jac = [
            [p[1][0] - p[0][0], p[2][0] - p[0][0], p[3][0] - p[0][0]],
            [p[1][1] - p[0][1], p[2][1] - p[0][1], p[3][1] - p[0][1]],
            [p[1][2] - p[0][2], p[2][2] - p[0][2], p[3][2] - p[0][2]],
        ];
        let (inv, det) = inverse3(jac);
        if !(det > 0.0) {
            return Err(Error::DegenerateTet(t));
        }
        let g1 = inv[0];
        let g2 = inv[1];
        let g3 = inv[2];
        let g0 = [
            -(g1[0] + g2[0] + g3[0]),
            -(g1[1] + g2[1] + g3[1]),
            -(g1[2] + g2[2] + g3[2]),
        ];
        grads.push([g0, g1, g2, g3]);
        volumes.push(det / 6.0);
        let mut b = [0.0; 3];
        for q in &p {
            for a in 0..3 {
                b[a] += 0.25 * q[a];
            }
        }
        barycenters.push(b);
        let mut d: f64 = 0.0;
        for [a, c] in LOCAL_EDGES {
            d = d.max(norm(sub(p[a], p[c])));
        }
        diameters.push(d);
    }

    // Edges.
    let mut edge_keys: Vec<([usize; 2], usize, usize)> = Vec::with_capacity(6 * n_tets);
    for (t, v) in tets.iter().enumerate() {
        for (le, [a, b]) in LOCAL_EDGES.iter().enumerate() {
            edge_keys.push((entity_key(n, [v[*a], v[*b]], periodic), t, le));
        }
    }
    edge_keys.sort_unstable();
    let mut edges = Vec::new();
    let mut tet_edges = vec![[usize::MAX; 6]; n_tets];
    for (i, (key, t, le)) in edge_keys.iter().enumerate() {
        if i == 0 || edge_keys[i - 1].0 != *key {
            edges.push(*key);
        }
        tet_edges[*t][*le] = edges.len() - 1;
    }

    // Faces.
    let mut face_keys: Vec<([usize; 3], usize, usize)> = Vec::with_capacity(4 * n_tets);
    for (t, v) in tets.iter().enumerate() {
        for (lf, [a, b, c]) in LOCAL_FACES.iter().enumerate() {
            face_keys.push((entity_key(n, [v[*a], v[*b], v[*c]], periodic), t, lf));
        }
    }
    face_keys.sort_unstable();
    let mut faces: Vec<Face> = Vec::new();
    let mut tet_faces = vec![[usize::MAX; 4]; n_tets];
    let mut i = 0;
    while i < face_keys.len() {
        let mut j = i + 1;
        while j < face_keys.len() && face_keys[j].0 == face_keys[i].0 {
            j += 1;
        }
        let group = &face_keys[i..j];
        if group.len() > 2 {
            return Err(Error::InvalidMesh(format!(
                "face {:?} shared by {} tets",
                group[0].0,
                group.len()
            )));
        }
        // Sorting puts the lower tet id first.
        let (_, owner, owner_local) = group[0];
        let neighbor = group.get(1).map(|&(_, t, lf)| (t, lf));
        let lv = LOCAL_FACES[owner_local];
        let ov = tets[owner];
        let fv = [ov[lv[0]], ov[lv[1]], ov[lv[2]]];
        let p = [vertices[fv[0]], vertices[fv[1]], vertices[fv[2]]];
        let cr = cross(sub(p[1], p[0]), sub(p[2], p[0]));
        let area = 0.5 * norm(cr);
        let mut normal = [cr[0] / (2.0 * area), cr[1] / (2.0 * area), cr[2] / (2.0 * area)];
        // Orient away from the owner's opposite vertex.
        if dot(normal, sub(vertices[ov[owner_local]], p[0])) > 0.0 {
            normal = [-normal[0], -normal[1], -normal[2]];
        }
        let diameter = norm(sub(p[0], p[1]))
            .max(norm(sub(p[0], p[2])))
            .max(norm(sub(p[1], p[2])));
        let id = faces.len();
        tet_faces[owner][owner_local] = id;
        if let Some((t, lf)) = neighbor {
            tet_faces[t][lf] = id;
        }
        faces.push(Face {
            vertices: fv,
            owner,
            owner_local,
            neighbor,
            area,
            diameter,
            normal,
        });
        i = j;
    }

    let mut edge_boundary = vec![false; edges.len()];
    for f in faces.iter().filter(|f| !f.is_interior()) {
        let t = f.owner;
        for (le, [a, b]) in LOCAL_EDGES.iter().enumerate() {
            if *a != f.owner_local && *b != f.owner_local {
                edge_boundary[tet_edges[t][le]] = true;
            }
        }
    }

    Ok(TetMesh {
        domain,
        n,
        vertices,
        tets,
        edges,
        edge_boundary,
        faces,
        tet_edges,
        tet_faces,
        barycenters,
        volumes,
        diameters,
        grads,
    })
}
