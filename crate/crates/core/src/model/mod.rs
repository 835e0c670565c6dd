//! Parameters, grids, potentials, cutoffs and the special functions shared
//! by every other module.

mod config;
mod cutoff;
mod field;
mod grid;
mod params;
mod potential;
pub mod special;

pub use config::{ConfigFile, Model};
pub use cutoff::{default_chi, Cutoff, GNorm};
pub use field::{FieldKind, LatticeField};
pub use grid::{wrap_signed, GridSpec};
pub use params::ModelParams;
pub use potential::{interpolate_periodic, Potential};
pub use special::{polylog, polylog_general, zeta};

use crate::error::{KmsError, Result};
use crate::fft::SiteFft;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Norms {
    pub v0: f64,
    pub v_l1: f64,
    pub g_l1: f64,
    /// β Σ_{x,x'} g(x) v(x-x') g(x') a^{2d}
    pub vtilde_gg: f64,
}

/// (v * f)(x) = Σ_y v(x-y) f(y) a^d on the grid.
pub fn convolve_sites(grid: &GridSpec, v_sites: &[f64], f: &[f64]) -> Vec<f64> {
    let fft = SiteFft::new(grid);
    let mut vb: Vec<_> = v_sites.iter().map(|&x| rustfft::num_complex::Complex64::new(x, 0.0)).collect();
    let mut fb: Vec<_> = f.iter().map(|&x| rustfft::num_complex::Complex64::new(x, 0.0)).collect();
    fft.forward(&mut vb);
    fft.forward(&mut fb);
    for (a, b) in fb.iter_mut().zip(&vb) {
        *a *= b;
    }
    fft.inverse(&mut fb);
    let a = grid.cell_volume();
    fb.iter().map(|z| z.re * a).collect()
}

pub fn norms(params: &ModelParams, grid: &GridSpec, potential: &Potential, cutoff: &Cutoff) -> Result<Norms> {
    if cutoff.g.len() != grid.total_sites() {
        return Err(KmsError::Shape("cutoff and potential live on different grids".into()));
    }
    let v = potential.on_grid(grid)?;
    let a = grid.cell_volume();
    let vg = convolve_sites(grid, &v, &cutoff.g);
    let vtilde_gg = params.beta * cutoff.g.iter().zip(&vg).map(|(g, w)| g * w).sum::<f64>() * a;
    Ok(Norms {
        v0: v[0],
        v_l1: v.iter().map(|x| x.abs()).sum::<f64>() * a,
        g_l1: cutoff.g_l1(grid),
        vtilde_gg,
    })
}

impl Model {
    pub fn norms(&self) -> Result<Norms> {
        norms(&self.params, &self.grid, &self.potential, &self.cutoff)
    }
}
