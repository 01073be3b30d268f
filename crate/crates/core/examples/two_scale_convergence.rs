//! Energy-norm error of the laminate HMM solution under joint refinement
//! of the macro and micro meshes, against an overkill reference.
//!
//! cargo run --release --example two_scale_convergence -- 16 2 4 8

use maxwell_hmm::coeffs::{CoefficientField, SourceField};
use maxwell_hmm::errors::{error_triple, observed_rate};
use maxwell_hmm::hmm::{solve_hmm, HmmConfig};
use maxwell_hmm::mesh::BoxDomain;
use num_complex::Complex64;

fn main() -> maxwell_hmm::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (reference_n, levels) = match args.split_first() {
        Some((r, l)) if !l.is_empty() => (*r, l.to_vec()),
        _ => (16, vec![2, 4, 8]),
    };
    let mk = |n: usize| HmmConfig {
        domain: BoxDomain::unit_cube(),
        macro_n: n,
        micro_n: n,
        coeffs: CoefficientField::laminate(2.0, 1.0, 0).expect("laminate"),
        source: SourceField::SinE1 { amp: Complex64::from(1.0) },
        delta: 0.25,
    };
    let reference = solve_hmm(&mk(reference_n))?;
    println!("reference ({reference_n}, {reference_n}), residual {:.1e}", reference.residual);
    println!("{:>4} {:>12} {:>12} {:>12} {:>12}", "n", "energy", "curl", "div", "l2");
    let (mut h, mut e) = (vec![], vec![]);
    for n in levels {
        let sol = solve_hmm(&mk(n))?;
        let err = error_triple(&sol, &reference)?;
        println!("{n:>4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}", err.total, err.curl, err.div, err.l2);
        h.push(sol.space.mesh.max_diameter());
        e.push(err.total);
    }
    if h.len() > 1 {
        println!("observed order {:.3}", observed_rate(&h, &e));
    }
    Ok(())
}
