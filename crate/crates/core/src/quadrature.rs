//! Quadrature rules on the reference tetrahedron, triangle and interval.
//!
//! Tetrahedron and triangle points are stored in barycentric coordinates and
//! weights are normalized to sum to one, so `sum w_q f(x_q) * |T|` integrates
//! over a physical simplex.

/// A tetrahedron rule in barycentric coordinates.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
    /// Total polynomial degree integrated exactly.
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 4], f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Returns a tetrahedron rule exact for polynomials of total degree
/// `degree`; supported degrees are 1, 2 and 4 (3 maps to the degree-4 rule).
pub fn tet_rule(degree: usize) -> Option<QuadratureRule> {
    match degree {
        0 | 1 => Some(QuadratureRule {
            points: vec![[0.25; 4]],
            weights: vec![1.0],
            degree: 1,
        }),
        2 => {
            let a = 0.585_410_196_624_968_5;
            let b = 0.138_196_601_125_010_5;
            Some(QuadratureRule {
                points: vec![[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]],
                weights: vec![0.25; 4],
                degree: 2,
            })
        }
        3 | 4 => Some(keast_degree4()),
        _ => None,
    }
}

/// Keast's 11-point rule. The centroid weight is negative.
fn keast_degree4() -> QuadratureRule {
    let mut points = vec![[0.25; 4]];
    let mut weights = vec![-74.0 / 5625.0 * 6.0];
    let a = 1.0 / 14.0;
    let b = 11.0 / 14.0;
    for k in 0..4 {
        let mut p = [a; 4];
        p[k] = b;
        points.push(p);
        weights.push(343.0 / 45000.0 * 6.0);
    }
    let s = (5.0f64 / 14.0).sqrt();
    let c = (1.0 + s) / 4.0;
    let d = (1.0 - s) / 4.0;
    for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
        let mut p = [d; 4];
        p[i] = c;
        p[j] = c;
        points.push(p);
        weights.push(56.0 / 2250.0 * 6.0);
    }
    QuadratureRule {
        points,
        weights,
        degree: 4,
    }
}

/// Degree-2 rule on a triangle (barycentric points, unit weight sum).
pub fn triangle_rule_degree2() -> ([[f64; 3]; 3], [f64; 3]) {
    let a = 2.0 / 3.0;
    let b = 1.0 / 6.0;
    ([[a, b, b], [b, a, b], [b, b, a]], [1.0 / 3.0; 3])
}

/// Three-point Gauss-Legendre rule on `[0, 1]`, exact up to degree 5.
pub fn gauss_legendre_unit() -> ([f64; 3], [f64; 3]) {
    let r = (0.6f64).sqrt() / 2.0;
    ([0.5 - r, 0.5, 0.5 + r], [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
}
