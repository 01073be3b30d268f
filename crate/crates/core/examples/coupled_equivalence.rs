//! Block elimination of the coupled two-scale system reproduces the
//! tensor-assembled macro matrix and its solution.

use std::sync::Arc;

use maxwell_hmm::cell::homogenize_all;
use maxwell_hmm::coeffs::{CoefficientField, SourceField};
use maxwell_hmm::fespace::EdgeSpace;
use maxwell_hmm::hmm::{assemble_coupled_two_scale, assemble_macro, solve_macro};
use maxwell_hmm::mesh::{build_box_mesh, build_periodic_cube_mesh, BoxDomain};
use num_complex::Complex64;

fn main() -> maxwell_hmm::Result<()> {
    let coeffs = CoefficientField::laminate(2.0, 1.0, 0)?;
    let source = SourceField::SinE1 { amp: Complex64::from(1.0) };
    let mac = Arc::new(build_box_mesh(BoxDomain::unit_cube(), 2)?);
    let cells = Arc::new(homogenize_all(&mac, Arc::new(build_periodic_cube_mesh(2)?), &coeffs)?);
    let space = Arc::new(EdgeSpace::new(mac));

    let coupled = assemble_coupled_two_scale(&space, &cells, &source)?;
    println!("coupled system: {} unknowns, {} macro", coupled.system.n, coupled.n_macro);
    let schur = coupled.schur_complement()?;
    let a = assemble_macro(&space, &cells)?.compress();
    let mut worst: f64 = 0.0;
    for i in 0..a.n {
        for j in 0..a.n {
            worst = worst.max((schur[i][j] - a.get(i, j)).norm());
        }
    }
    println!("max |Schur - tensor matrix| = {worst:.3e}");

    let x = coupled.solve_macro_part()?;
    let sol = solve_macro(space, cells, coeffs, source, 0.5)?;
    let diff = x.iter().zip(&sol.dofs).fold(0.0f64, |m, (p, q)| m.max((p - q).norm()));
    println!("max |coupled - tensor solution| = {diff:.3e}");
    Ok(())
}
