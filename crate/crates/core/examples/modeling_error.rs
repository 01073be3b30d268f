//! Distance between direct fine-scale solutions `E_delta` and the
//! reconstructed HMM field as the period shrinks.
//!
//! cargo run --release --example modeling_error -- 24

use std::sync::Arc;

use maxwell_hmm::cell::homogenize_all;
use maxwell_hmm::coeffs::{CoefficientField, SourceField};
use maxwell_hmm::errors::{modeling_error, solve_direct_fine};
use maxwell_hmm::fespace::EdgeSpace;
use maxwell_hmm::hmm::solve_macro;
use maxwell_hmm::mesh::{build_box_mesh, build_periodic_cube_mesh, BoxDomain};
use num_complex::Complex64;

fn main() -> maxwell_hmm::Result<()> {
    let fine_n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(24);
    let domain = BoxDomain::unit_cube();
    let coeffs = CoefficientField::laminate(2.0, 1.0, 0)?;
    let source = SourceField::SinE1 { amp: Complex64::from(1.0) };
    let mac = Arc::new(build_box_mesh(domain, 8)?);
    let cells = Arc::new(homogenize_all(&mac, Arc::new(build_periodic_cube_mesh(8)?), &coeffs)?);
    let space = Arc::new(EdgeSpace::new(mac));
    let mut previous = None;
    for delta in [0.5, 0.25] {
        let hmm = solve_macro(space.clone(), cells.clone(), coeffs.clone(), source.clone(), delta)?;
        // Six fine cells per period is the coarsest resolution used here.
        let fine = solve_direct_fine(&coeffs, delta, &source, domain, fine_n, 6.0)?;
        let (l2, curl) = modeling_error(&fine, &hmm)?;
        let ratio = previous.map(|p: f64| p / l2);
        println!(
            "delta {delta:<5} fine n {fine_n}: L2 {l2:.4e}, curl {curl:.4e}, ratio {}",
            ratio.map_or("-".into(), |r| format!("{r:.3}"))
        );
        previous = Some(l2);
    }
    Ok(())
}
