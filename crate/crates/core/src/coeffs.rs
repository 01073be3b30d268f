//! Locally periodic coefficients `mu^-1(x, y)` (real) and `kappa(x, y)`
//! (complex), source fields, and barycenter sampling on macro x micro
//! element pairs.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CVec3, Vec3, CZERO};
use crate::mesh::{BoxDomain, PeriodicMicroMesh, TetMesh};

/// The common complex factor of the laminate presets.
pub const LOSS_FACTOR: Complex64 = Complex64::new(1.0, -1.0);

/// Preset parameters as they appear in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientParams {
    pub m0: f64,
    pub k0_re: f64,
    pub k0_im: f64,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    /// Lamination axis (0, 1 or 2) of the laminate presets.
    pub axis: usize,
}

impl Default for CoefficientParams {
    fn default() -> Self {
        Self {
            m0: 1.0,
            k0_re: 1.0,
            k0_im: -1.0,
            a: 2.0,
            b: 1.0,
            gamma: 0.5,
            axis: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Preset {
    Constant { m0: f64, k0: Complex64 },
    Laminate { a: f64, b: f64, axis: usize },
    Separable { a: f64, b: f64, gamma: f64, axis: usize },
}

/// A coefficient pair on `Omega x Y` with bounds `c0 <= mu^-1, Re kappa,
/// -Im kappa <= c1`.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    pub name: String,
    pub preset: Preset,
    pub c0: f64,
    pub c1: f64,
}

impl CoefficientField {
    /// Builds a named preset: `constant`, `laminate_y1` or `separable_xy`.
    /// The domain is needed to bound the x-modulation of `separable_xy`.
    pub fn preset(name: &str, p: &CoefficientParams, domain: &BoxDomain) -> Result<Self> {
        let (preset, c0, c1) = match name {
            "constant" => {
                let k0 = Complex64::new(p.k0_re, p.k0_im);
                let vals = [p.m0, k0.re, -k0.im];
                let c0 = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let c1 = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (Preset::Constant { m0: p.m0, k0 }, c0, c1)
            }
            "laminate_y1" => {
                check_laminate(p)?;
                (
                    Preset::Laminate {
                        a: p.a,
                        b: p.b,
                        axis: p.axis,
                    },
                    p.a - p.b,
                    p.a + p.b,
                )
            }
            "separable_xy" => {
                check_laminate(p)?;
                let s_lo = 1.0 + p.gamma * if p.gamma >= 0.0 { domain.lo[0] } else { domain.hi[0] };
                let s_hi = 1.0 + p.gamma * if p.gamma >= 0.0 { domain.hi[0] } else { domain.lo[0] };
                if !(s_lo > 0.0) {
                    return Err(Error::BoundViolation(format!(
                        "1 + gamma x1 reaches {s_lo} on the domain; gamma = {} is too large",
                        p.gamma
                    )));
                }
                (
                    Preset::Separable {
                        a: p.a,
                        b: p.b,
                        gamma: p.gamma,
                        axis: p.axis,
                    },
                    (p.a - p.b) * s_lo,
                    (p.a + p.b) * s_hi,
                )
            }
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        if !(c0 > 0.0) || !c1.is_finite() {
            return Err(Error::BoundViolation(format!(
                "preset `{name}` has lower bound {c0}; it must be positive"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            preset,
            c0,
            c1,
        })
    }

    pub fn constant(m0: f64, k0: Complex64) -> Result<Self> {
        let p = CoefficientParams {
            m0,
            k0_re: k0.re,
            k0_im: k0.im,
            ..Default::default()
        };
        Self::preset("constant", &p, &BoxDomain::unit_cube())
    }

    pub fn laminate(a: f64, b: f64, axis: usize) -> Result<Self> {
        let p = CoefficientParams {
            a,
            b,
            axis,
            ..Default::default()
        };
        Self::preset("laminate_y1", &p, &BoxDomain::unit_cube())
    }

    /// The real profile `s(x, y)` with `mu^-1 = s` and `kappa = s (1 - i)`
    /// for the laminate presets.
    #[inline]
    fn profile(&self, x: Vec3, y: Vec3) -> f64 {
        match self.preset {
            Preset::Constant { m0, .. } => m0,
            Preset::Laminate { a, b, axis } => a + b * (2.0 * PI * y[axis]).sin(),
            Preset::Separable { a, b, gamma, axis } => {
                (a + b * (2.0 * PI * y[axis]).sin()) * (1.0 + gamma * x[0])
            }
        }
    }

    #[inline]
    pub fn mu_inv(&self, x: Vec3, y: Vec3) -> f64 {
        self.profile(x, y)
    }

    #[inline]
    pub fn kappa(&self, x: Vec3, y: Vec3) -> Complex64 {
        match self.preset {
            Preset::Constant { k0, .. } => k0,
            _ => LOSS_FACTOR * self.profile(x, y),
        }
    }

    /// True when neither coefficient depends on `x`.
    pub fn x_independent(&self) -> bool {
        match self.preset {
            Preset::Constant { .. } | Preset::Laminate { .. } => true,
            Preset::Separable { gamma, .. } => gamma == 0.0,
        }
    }

    /// True when neither coefficient depends on `y`.
    pub fn y_independent(&self) -> bool {
        match self.preset {
            Preset::Constant { .. } => true,
            Preset::Laminate { b, .. } | Preset::Separable { b, .. } => b == 0.0,
        }
    }

    /// Lipschitz constant of `kappa` in `(x, y)` jointly (Euclidean norms).
    pub fn kappa_lipschitz(&self, domain: &BoxDomain) -> f64 {
        let f = LOSS_FACTOR.norm();
        match self.preset {
            Preset::Constant { .. } => 0.0,
            Preset::Laminate { b, .. } => f * 2.0 * PI * b,
            Preset::Separable { a, b, gamma, .. } => {
                let smax = 1.0 + gamma.abs() * domain.lo[0].abs().max(domain.hi[0].abs());
                f * ((2.0 * PI * b * smax).powi(2) + (gamma * (a + b)).powi(2)).sqrt()
            }
        }
    }

    /// Checks the declared bounds on a `5^3 x 5^3` probe grid of `Omega x Y`
    /// and periodicity in `y`; returns every violation found.
    pub fn verify(&self, domain: &BoxDomain) -> Result<()> {
        let mut problems = Vec::new();
        let probe = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / 4.0;
        let tol = 1e-12 * self.c1.max(1.0);
        for xi in 0..125 {
            let x = [
                probe(domain.lo[0], domain.hi[0], xi % 5),
                probe(domain.lo[1], domain.hi[1], (xi / 5) % 5),
                probe(domain.lo[2], domain.hi[2], xi / 25),
            ];
            for yi in 0..125 {
                let y = [
                    probe(-0.5, 0.5, yi % 5),
                    probe(-0.5, 0.5, (yi / 5) % 5),
                    probe(-0.5, 0.5, yi / 25),
                ];
                let m = self.mu_inv(x, y);
                let k = self.kappa(x, y);
                for (what, v) in [("mu^-1", m), ("Re kappa", k.re), ("-Im kappa", -k.im)] {
                    if v < self.c0 - tol || v > self.c1 + tol {
                        problems.push(format!("{what} = {v} outside [{}, {}] at x={x:?}, y={y:?}", self.c0, self.c1));
                    }
                }
                for e in 0..3 {
                    let mut ys = y;
                    ys[e] += 1.0;
                    if (self.mu_inv(x, ys) - m).abs() > 1e-14 * m.abs().max(1.0) * 10.0
                        || (self.kappa(x, ys) - k).norm() > 1e-14 * k.norm().max(1.0) * 10.0
                    {
                        problems.push(format!("not periodic along y{} at y={y:?}", e + 1));
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            problems.truncate(10);
            Err(Error::BoundViolation(problems.join("; ")))
        }
    }

    /// Closed-form homogenized tensors of the laminate presets (diagonal);
    /// `None` for x-dependent coefficients.
    pub fn laminate_limits(&self) -> Option<([f64; 3], [Complex64; 3])> {
        match self.preset {
            Preset::Constant { m0, k0 } => Some(([m0; 3], [k0; 3])),
            Preset::Laminate { a, b, axis } => {
                // Harmonic mean of a + b sin(2 pi t) over a period.
                let harm = (a * a - b * b).sqrt();
                // The curl tensor averages arithmetically along the axis and
                // harmonically across; the field tensor does the opposite.
                let mut m = [harm; 3];
                m[axis] = a;
                let mut k = [LOSS_FACTOR * a; 3];
                k[axis] = LOSS_FACTOR * harm;
                Some((m, k))
            }
            Preset::Separable { .. } => None,
        }
    }
}

fn check_laminate(p: &CoefficientParams) -> Result<()> {
    if p.axis > 2 {
        return Err(Error::BoundViolation(format!("axis {} is not 0, 1 or 2", p.axis)));
    }
    if !(p.a > 0.0) || !(p.b.abs() < p.a) {
        return Err(Error::BoundViolation(format!(
            "laminate needs |b| < a, got a = {}, b = {}",
            p.a, p.b
        )));
    }
    Ok(())
}

/// Divergence-free source fields.
#[derive(Clone, Debug, PartialEq)]
pub enum SourceField {
    Constant(CVec3),
    /// `amp sin(pi x2) sin(pi x3) e1` on the unit cube.
    SinE1 { amp: Complex64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceParams {
    pub amp_re: f64,
    pub amp_im: f64,
    pub vector: [f64; 3],
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            amp_re: 1.0,
            amp_im: 0.0,
            vector: [1.0, 0.0, 0.0],
        }
    }
}

impl SourceField {
    /// `constant` (a constant real vector), `sin_e1`, or `mms` (the source
    /// whose solution for constant coefficients `mu^-1 = 1`, `kappa = k0` is
    /// `sin(pi x2) sin(pi x3) e1`).
    pub fn preset(name: &str, p: &SourceParams, k0: Complex64) -> Result<Self> {
        match name {
            "constant" => Ok(Self::Constant(crate::geom::to_complex(p.vector))),
            "sin_e1" => Ok(Self::SinE1 {
                amp: Complex64::new(p.amp_re, p.amp_im),
            }),
            "mms" => Ok(Self::mms(k0)),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn mms(k0: Complex64) -> Self {
        Self::SinE1 {
            amp: Complex64::from(2.0 * PI * PI) - k0,
        }
    }

    #[inline]
    pub fn eval(&self, x: Vec3) -> CVec3 {
        match self {
            Self::Constant(v) => *v,
            Self::SinE1 { amp } => {
                let s = (PI * x[1]).sin() * (PI * x[2]).sin();
                [amp * s, CZERO, CZERO]
            }
        }
    }

    pub fn scaled(&self, t: f64) -> Self {
        match self {
            Self::Constant(v) => Self::Constant([v[0] * t, v[1] * t, v[2] * t]),
            Self::SinE1 { amp } => Self::SinE1 { amp: amp * t },
        }
    }
}

/// Coefficient samples at the micro barycenters for one macro point.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSamples {
    pub mu_inv: Vec<f64>,
    pub kappa: Vec<Complex64>,
}

impl CellSamples {
    pub fn at(field: &CoefficientField, x: Vec3, micro: &TetMesh) -> Self {
        Self {
            mu_inv: micro.barycenters.iter().map(|&y| field.mu_inv(x, y)).collect(),
            kappa: micro.barycenters.iter().map(|&y| field.kappa(x, y)).collect(),
        }
    }

    fn key(&self) -> Vec<u64> {
        self.mu_inv
            .iter()
            .map(|v| v.to_bits())
            .chain(self.kappa.iter().flat_map(|c| [c.re.to_bits(), c.im.to_bits()]))
            .collect()
    }
}

/// Piecewise-constant coefficients `mu^-1_h(x_j, y_i)` and `kappa_h(x_j, y_i)`
/// for every macro element `j`, stored once per distinct sample set.
#[derive(Clone, Debug)]
pub struct SampledCoefficients {
    pub sets: Vec<CellSamples>,
    /// Index into `sets` for each macro element.
    pub set_of: Vec<usize>,
}

impl SampledCoefficients {
    pub fn sample(field: &CoefficientField, macro_mesh: &TetMesh, micro: &PeriodicMicroMesh) -> Self {
        if field.x_independent() {
            let s = CellSamples::at(field, macro_mesh.barycenters[0], micro);
            return Self {
                sets: vec![s],
                set_of: vec![0; macro_mesh.n_tets()],
            };
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut sets = Vec::new();
        let mut set_of = Vec::with_capacity(macro_mesh.n_tets());
        for &x in &macro_mesh.barycenters {
            let s = CellSamples::at(field, x, micro);
            let id = *index.entry(s.key()).or_insert_with(|| {
                sets.push(s);
                sets.len() - 1
            });
            set_of.push(id);
        }
        Self { sets, set_of }
    }

    pub fn get(&self, j: usize) -> &CellSamples {
        &self.sets[self.set_of[j]]
    }

    pub fn n_elements(&self) -> usize {
        self.set_of.len()
    }
}
