use crate::error::{KmsError, Result};
use serde::{Deserialize, Serialize};

/// Periodic spatial lattice times a uniform imaginary-time grid on [0, β).
///
/// Sites are stored row-major with the last axis fastest. Space-time
/// vectors are laid out slice-major: `slice * n_sites + site`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub box_length: Vec<f64>,
    pub n_sites: Vec<usize>,
    pub n_time: usize,
    beta: f64,
}

impl GridSpec {
    pub fn new(box_length: Vec<f64>, n_sites: Vec<usize>, n_time: usize, beta: f64) -> Result<Self> {
        let d = box_length.len();
        if d == 0 || d > 3 || n_sites.len() != d {
            return Err(KmsError::Invariant(format!(
                "grid dimension must be 1..3 with one box_length and n_sites per axis (got {} and {})",
                d,
                n_sites.len()
            )));
        }
        if box_length.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(KmsError::Invariant("box_length must be positive and finite".into()));
        }
        if n_sites.iter().any(|&n| n == 0) || n_time == 0 {
            return Err(KmsError::Invariant("n_sites and n_time must be positive".into()));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(KmsError::Invariant("beta must be positive".into()));
        }
        Ok(GridSpec { box_length, n_sites, n_time, beta })
    }

    /// Cube of side `l` with `n` sites per axis.
    pub fn cube(dim: usize, l: f64, n: usize, n_time: usize, beta: f64) -> Result<Self> {
        Self::new(vec![l; dim], vec![n; dim], n_time, beta)
    }

    pub fn dim(&self) -> usize {
        self.n_sites.len()
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn total_sites(&self) -> usize {
        self.n_sites.iter().product()
    }
    pub fn spacetime_len(&self) -> usize {
        self.total_sites() * self.n_time
    }
    pub fn spacing(&self, axis: usize) -> f64 {
        self.box_length[axis] / self.n_sites[axis] as f64
    }
    /// a^d, the volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }
    pub fn volume(&self) -> f64 {
        self.box_length.iter().product()
    }
    pub fn dtau(&self) -> f64 {
        self.beta / self.n_time as f64
    }
    pub fn time(&self, slice: usize) -> f64 {
        slice as f64 * self.dtau()
    }
    pub fn st_index(&self, site: usize, slice: usize) -> usize {
        slice * self.total_sites() + site
    }

    pub fn multi_index(&self, site: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        let mut rem = site;
        for a in (0..self.dim()).rev() {
            out[a] = rem % self.n_sites[a];
            rem /= self.n_sites[a];
        }
        out
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.n_sites).fold(0, |acc, (&i, &n)| acc * n + (i % n))
    }

    pub fn coord(&self, site: usize) -> Vec<f64> {
        self.multi_index(site)
            .iter()
            .enumerate()
            .map(|(a, &i)| i as f64 * self.spacing(a))
            .collect()
    }

    /// Site nearest to a point, wrapping periodically.
    pub fn site_of(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = x
            .iter()
            .enumerate()
            .map(|(a, &xa)| {
                let n = self.n_sites[a] as i64;
                let k = (xa / self.spacing(a)).round() as i64;
                k.rem_euclid(n) as usize
            })
            .collect();
        self.flat_index(&idx)
    }

    /// Signed integer wave number for FFT bin `j` on an axis with `n` points.
    pub fn wave_number(n: usize, j: usize) -> i64 {
        if j < (n + 1) / 2 {
            j as i64
        } else {
            j as i64 - n as i64
        }
    }

    /// Momentum vector of FFT bin `site` (same layout as positions).
    pub fn momentum(&self, site: usize) -> Vec<f64> {
        self.multi_index(site)
            .iter()
            .enumerate()
            .map(|(a, &j)| {
                2.0 * std::f64::consts::PI * Self::wave_number(self.n_sites[a], j) as f64 / self.box_length[a]
            })
            .collect()
    }

    pub fn momentum_sq(&self, site: usize) -> f64 {
        self.momentum(site).iter().map(|p| p * p).sum()
    }

    /// Displacement x_i - x_j reduced to the minimal image on each axis.
    pub fn min_image(&self, i: usize, j: usize) -> Vec<f64> {
        let xi = self.coord(i);
        let xj = self.coord(j);
        (0..self.dim()).map(|a| wrap_signed(xi[a] - xj[a], self.box_length[a])).collect()
    }

    /// Site index of x_i - x_j (periodic difference), used for translation-invariant kernels.
    pub fn diff_site(&self, i: usize, j: usize) -> usize {
        let a = self.multi_index(i);
        let b = self.multi_index(j);
        let idx: Vec<usize> = (0..self.dim()).map(|k| (a[k] + self.n_sites[k] - b[k]) % self.n_sites[k]).collect();
        self.flat_index(&idx)
    }

    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.n_sites == other.n_sites && self.box_length == other.box_length && self.n_time == other.n_time
    }
}

/// Reduce `x` into [-L/2, L/2).
pub fn wrap_signed(x: f64, l: f64) -> f64 {
    x - l * (x / l + 0.5).floor()
}
