//! Effective tensors of the laminate `2 + sin(2 pi y1)` on refined cells,
//! compared with the closed-form harmonic and arithmetic means.
//!
//! cargo run --release --example cell_tensors -- 4 8 16

use std::sync::Arc;

use maxwell_hmm::cell::homogenize_all;
use maxwell_hmm::coeffs::CoefficientField;
use maxwell_hmm::errors::observed_rate;
use maxwell_hmm::mesh::{build_box_mesh, build_periodic_cube_mesh, BoxDomain};

fn main() -> maxwell_hmm::Result<()> {
    let ns: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ns = if ns.is_empty() { vec![4, 8, 16] } else { ns };
    let field = CoefficientField::laminate(2.0, 1.0, 0)?;
    let (m_exact, k_exact) = field.laminate_limits().expect("laminate preset");
    let macro_mesh = build_box_mesh(BoxDomain::unit_cube(), 1)?;

    println!("{:>4} {:>22} {:>22} {:>12} {:>12}", "n", "Mhom diag", "Khom11", "err M", "err K");
    let (mut hs, mut em, mut ek) = (vec![], vec![], vec![]);
    for &n in &ns {
        let micro = Arc::new(build_periodic_cube_mesh(n)?);
        let cells = homogenize_all(&macro_mesh, micro, &field)?;
        let (m, k) = (cells.mhom(0), cells.khom(0));
        let err_m = (0..3).map(|a| (m[a][a] - m_exact[a]).abs() / m_exact[a]).fold(0.0, f64::max);
        let err_k = (0..3).map(|a| (k[a][a] - k_exact[a]).norm() / k_exact[a].norm()).fold(0.0, f64::max);
        println!(
            "{n:>4} {:>7.5} {:>7.5} {:>7.5} {:>10.6}{:+.6}i {err_m:>12.3e} {err_k:>12.3e}",
            m[0][0], m[1][1], m[2][2], k[0][0].re, k[0][0].im
        );
        hs.push(1.0 / n as f64);
        em.push(err_m);
        ek.push(err_k);
    }
    if ns.len() > 1 {
        println!("observed order: M {:.2}, K {:.2}", observed_rate(&hs, &em), observed_rate(&hs, &ek));
    }
    println!("limits: M = {m_exact:?}, K11 = {}", k_exact[0]);
    Ok(())
}
