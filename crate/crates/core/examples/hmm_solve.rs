//! One HMM solve for the laminate preset, followed by evaluation of the
//! reconstructed oscillating field along a line.
//!
//! cargo run --release --example hmm_solve -- 8 8 0.25

use maxwell_hmm::coeffs::{CoefficientField, SourceField};
use maxwell_hmm::hmm::{solve_hmm, HmmConfig};
use maxwell_hmm::mesh::BoxDomain;
use num_complex::Complex64;

fn main() -> maxwell_hmm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let get = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let cfg = HmmConfig {
        domain: BoxDomain::unit_cube(),
        macro_n: get(0, 8.0) as usize,
        micro_n: get(1, 8.0) as usize,
        coeffs: CoefficientField::laminate(2.0, 1.0, 0)?,
        source: SourceField::SinE1 { amp: Complex64::from(1.0) },
        delta: get(2, 0.25),
    };
    let t = std::time::Instant::now();
    let sol = solve_hmm(&cfg)?;
    println!(
        "macro n = {}, micro n = {}: {} unknowns, {} cell set(s), residual {:.2e}, {:.2?}",
        cfg.macro_n,
        cfg.micro_n,
        sol.dofs.len(),
        sol.cells.cells.len(),
        sol.residual,
        t.elapsed()
    );
    println!("Mhom diag = {:?}", (0..3).map(|a| sol.cells.mhom(0)[a][a]).collect::<Vec<_>>());

    println!("{:>6} {:>24} {:>24}", "x1", "E_H . e1", "E_HMM . e1");
    for k in 0..=16 {
        let x = [k as f64 / 16.0 * 0.999 + 0.0005, 0.5, 0.5];
        let (eh, _) = sol.evaluate_macro(x)?;
        let (e, _) = sol.evaluate_ehmm(x)?;
        println!("{:>6.3} {:>11.5}{:+.5}i {:>11.5}{:+.5}i", x[0], eh[0].re, eh[0].im, e[0].re, e[0].im);
    }
    Ok(())
}
