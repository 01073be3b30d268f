//! Constant-coefficient manufactured solution: H(curl) error, the
//! Helmholtz-split norms and the discrete H^-1 norm under refinement.
//!
//! cargo run --release --example mms_convergence -- 4 8 16

use maxwell_hmm::coeffs::LOSS_FACTOR;
use maxwell_hmm::errors::{mms_reference, observed_rate};

fn main() -> maxwell_hmm::Result<()> {
    let ns: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ns = if ns.is_empty() { vec![4, 8, 16] } else { ns };
    let rows = mms_reference(LOSS_FACTOR, &ns, 2, 4)?;
    println!(
        "{:>4} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "n", "H(curl)", "interp", "theta", "z", "H^-1", "residual"
    );
    for r in &rows {
        println!(
            "{:>4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.2e}",
            r.n, r.hcurl, r.interpolation_hcurl, r.theta, r.z, r.h_minus1, r.residual
        );
    }
    if rows.len() > 1 {
        let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let rate = |f: &dyn Fn(&maxwell_hmm::errors::MmsRow) -> f64| observed_rate(&h, &rows.iter().map(f).collect::<Vec<_>>());
        println!("rates: H(curl) {:.3}", rate(&|r| r.hcurl));
        println!("       interpolation {:.3}", rate(&|r| r.interpolation_hcurl));
        println!("       theta + z {:.3}", rate(&|r| r.theta + r.z));
        println!("       H^-1 {:.3}", rate(&|r| r.h_minus1));
    }
    Ok(())
}
