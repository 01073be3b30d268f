//! Small fixed-size vector helpers shared by the assembly code.

use num_complex::Complex64;

pub type Vec3 = [f64; 3];
pub type CVec3 = [Complex64; 3];

pub const CZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const CZERO3: CVec3 = [CZERO; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(s: f64, a: Vec3) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn cadd(a: CVec3, b: CVec3) -> CVec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn csub(a: CVec3, b: CVec3) -> CVec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn cscale(s: Complex64, a: CVec3) -> CVec3 {
    [s * a[0], s * a[1], s * a[2]]
}

/// Real vector promoted to complex and scaled.
#[inline]
pub fn rscale(s: Complex64, a: Vec3) -> CVec3 {
    [s * a[0], s * a[1], s * a[2]]
}

/// Bilinear (non-conjugating) dot product.
#[inline]
pub fn cdot(a: CVec3, b: CVec3) -> Complex64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cdot_real(a: CVec3, b: Vec3) -> Complex64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn ccross_real(a: CVec3, n: Vec3) -> CVec3 {
    [
        a[1] * n[2] - a[2] * n[1],
        a[2] * n[0] - a[0] * n[2],
        a[0] * n[1] - a[1] * n[0],
    ]
}

#[inline]
pub fn cnorm_sqr(a: CVec3) -> f64 {
    a[0].norm_sqr() + a[1].norm_sqr() + a[2].norm_sqr()
}

#[inline]
pub fn to_complex(a: Vec3) -> CVec3 {
    [a[0].into(), a[1].into(), a[2].into()]
}

/// Complex 3x3 matrix times complex vector.
#[inline]
pub fn cmatvec(m: &[[Complex64; 3]; 3], v: CVec3) -> CVec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Real 3x3 matrix times complex vector.
#[inline]
pub fn rmatvec(m: &[[f64; 3]; 3], v: CVec3) -> CVec3 {
    [
        v[0] * m[0][0] + v[1] * m[0][1] + v[2] * m[0][2],
        v[0] * m[1][0] + v[1] * m[1][1] + v[2] * m[1][2],
        v[0] * m[2][0] + v[1] * m[2][1] + v[2] * m[2][2],
    ]
}

/// Inverse of a 3x3 matrix together with its determinant.
pub fn inverse3(m: [[f64; 3]; 3]) -> ([[f64; 3]; 3], f64) {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_det = 1.0 / det;
    let inv = [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
        ],
    ];
    (inv, det)
}
