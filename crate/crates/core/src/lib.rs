//! Lattice toolkit for the interacting Bose gas at positive temperature:
//! thermal propagators, Dyson and time-sliced interacting kernels,
//! Feynman–Kac estimators, Hubbard–Stratonovich averaging, relative-entropy
//! functionals, cumulant machinery and the convergence-region bounds.

pub mod bounds;
pub mod cumulants;
pub mod dyson;
pub mod entropy;
pub mod error;
pub mod fft;
pub mod hs;
pub mod model;
pub mod pathint;
pub mod propagator;
pub mod scalar;

pub use error::{KmsError, Result};
pub use scalar::Real;

/// Scalar used by the dense kernels, FFT and Monte Carlo layers.
pub type Scalar = f64;

/// f64 instances of the generic closed forms.
pub fn bose_factors(k: f64, beta: f64) -> Result<(f64, f64)> {
    propagator::bose_factors::<f64>(k, beta)
}

pub fn heat_kernel(disp: &[f64], tau: f64, mass: f64, lengths: &[f64]) -> f64 {
    propagator::heat_kernel::<f64>(disp, tau, mass, lengths)
}

pub fn weight_sum(beta: f64, mass: f64, mu_rr: f64, dim: usize) -> Result<f64> {
    propagator::weight_sum::<f64>(beta, mass, mu_rr, dim)
}

pub fn ctilde_state(beta: f64, mu_rr: f64, dim: usize) -> Result<f64> {
    bounds::ctilde_state::<f64>(beta, mu_rr, dim)
}

pub fn e_bound_value(c_tilde: f64, beta: f64, v0: f64, g_l1: f64, xi: f64, dim: usize) -> Result<f64> {
    bounds::e_bound_value::<f64>(c_tilde, beta, v0, g_l1, xi, dim)
}

pub fn polylog(s: f64, y: f64) -> Result<f64> {
    model::special::polylog::<f64>(s, y)
}
