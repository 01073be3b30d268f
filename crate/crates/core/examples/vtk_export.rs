//! Writes the macro field and its curl as a legacy VTK file.
//!
//! cargo run --release --example vtk_export -- field.vtk

use maxwell_hmm::coeffs::{CoefficientField, SourceField};
use maxwell_hmm::hmm::{solve_hmm, HmmConfig};
use maxwell_hmm::mesh::BoxDomain;
use maxwell_hmm::output::write_vtk;
use num_complex::Complex64;

fn main() -> maxwell_hmm::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "field.vtk".into());
    let sol = solve_hmm(&HmmConfig {
        domain: BoxDomain::unit_cube(),
        macro_n: 8,
        micro_n: 4,
        coeffs: CoefficientField::laminate(2.0, 1.0, 0)?,
        source: SourceField::SinE1 { amp: Complex64::from(1.0) },
        delta: 0.25,
    })?;
    write_vtk(
        path.as_ref(),
        &sol.space.mesh,
        "laminate HMM macro field",
        &[("e_h", &sol.centers), ("curl_e_h", &sol.curls)],
    )?;
    println!("wrote {path} ({} cells)", sol.space.mesh.n_tets());
    Ok(())
}
