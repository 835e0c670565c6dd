//! Multi-dimensional FFT over the spatial sites of a `GridSpec`.

use crate::model::GridSpec;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct SiteFft {
    dims: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl SiteFft {
    pub fn new(grid: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let dims = grid.n_sites.clone();
        let fwd = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inv = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        SiteFft { dims, fwd, inv }
    }

    fn total(&self) -> usize {
        self.dims.iter().product()
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let total = self.total();
        assert_eq!(data.len(), total);
        let mut stride = 1;
        for axis in (0..self.dims.len()).rev() {
            let n = self.dims[axis];
            let plan = if inverse { &self.inv[axis] } else { &self.fwd[axis] };
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let block = n * stride;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    for k in 0..n {
                        line[k] = data[outer + inner + k * stride];
                    }
                    plan.process(&mut line);
                    for k in 0..n {
                        data[outer + inner + k * stride] = line[k];
                    }
                }
            }
            stride *= n;
        }
        if inverse {
            let s = 1.0 / total as f64;
            data.iter_mut().for_each(|z| *z *= s);
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, false)
    }

    /// Inverse transform including the 1/N normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, true)
    }

    /// f ↦ F⁻¹[m · F f] for a real f and a real, even multiplier.
    pub fn apply_multiplier(&self, f: &[f64], mult: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut buf);
        for (z, m) in buf.iter_mut().zip(mult) {
            *z *= m;
        }
        self.inverse(&mut buf);
        buf.iter().map(|z| z.re).collect()
    }

    /// Real-space kernel c(x) = (1/V) Σ_p e^{ipx} m(p), sampled on the sites.
    pub fn kernel_from_multiplier(&self, mult: &[f64], volume: f64) -> Vec<f64> {
        let mut buf: Vec<Complex64> = mult.iter().map(|&m| Complex64::new(m, 0.0)).collect();
        self.inverse(&mut buf);
        let n = self.total() as f64;
        buf.iter().map(|z| z.re * n / volume).collect()
    }
}
