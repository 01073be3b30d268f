//! A posteriori indicators for the laminate preset: the five aggregates,
//! the effectivity against an overkill reference, and local efficiency.
//!
//! cargo run --release --example estimator_study -- 16 2 4 8

use maxwell_hmm::coeffs::{CoefficientField, SourceField};
use maxwell_hmm::errors::{aggregate_to, error_triple};
use maxwell_hmm::estimate::compute_indicators;
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
    println!(
        "{:>4} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8}",
        "n", "element", "face", "micro", "zeta", "zeta_ji", "error", "eff", "local"
    );
    for n in levels {
        let sol = solve_hmm(&mk(n))?;
        let err = error_triple(&sol, &reference)?;
        let table = compute_indicators(&sol, 1)?;
        let local: Vec<f64> = aggregate_to(&reference.space.mesh, &err.local_sq, &sol.space.mesh)?
            .into_iter()
            .map(f64::sqrt)
            .collect();
        let a = table.aggregates;
        println!(
            "{n:>4} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>8.2} {:>8.2}",
            a.element,
            a.face,
            a.micro,
            a.zeta,
            a.zeta_micro,
            err.total,
            table.effectivity(err.total).value().unwrap_or(f64::NAN),
            table.local_efficiency(&local).max()
        );
    }
    Ok(())
}
