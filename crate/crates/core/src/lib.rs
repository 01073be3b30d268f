//! Heterogeneous multiscale method for the time-harmonic Maxwell curl-curl
//! problem `curl(mu^-1 curl E) - kappa E = f` with locally periodic
//! coefficients, perfectly conducting boundary and lowest-order Nedelec
//! macro elements.

pub mod cell;
pub mod cli;
pub mod coeffs;
pub mod error;
pub mod errors;
pub mod estimate;
pub mod fespace;
pub mod geom;
pub mod hmm;
pub mod linsolve;
pub mod mesh;
pub mod output;
pub mod quadrature;

pub use error::{Error, Result};
