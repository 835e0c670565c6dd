use super::grid::GridSpec;
use crate::error::{KmsError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Potential,
    Smearing,
    Density,
}

/// Real field on sites × time slices, periodic in the slice index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeField {
    values: Vec<f64>,
    n_sites: usize,
    n_time: usize,
    pub kind: FieldKind,
}

impl LatticeField {
    /// `values` in slice-major order (`slice * n_sites + site`).
    pub fn new(grid: &GridSpec, values: Vec<f64>, kind: FieldKind) -> Result<Self> {
        if values.len() != grid.spacetime_len() {
            return Err(KmsError::Shape(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.spacetime_len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KmsError::Invariant("field entries must be finite".into()));
        }
        Ok(LatticeField { values, n_sites: grid.total_sites(), n_time: grid.n_time, kind })
    }

    pub fn zeros(grid: &GridSpec, kind: FieldKind) -> Self {
        Self::constant(grid, 0.0, kind)
    }

    pub fn constant(grid: &GridSpec, a: f64, kind: FieldKind) -> Self {
        LatticeField { values: vec![a; grid.spacetime_len()], n_sites: grid.total_sites(), n_time: grid.n_time, kind }
    }

    pub fn from_fn(grid: &GridSpec, kind: FieldKind, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let n = grid.total_sites();
        let values = (0..grid.spacetime_len()).map(|i| f(i % n, i / n)).collect();
        Self::new(grid, values, kind)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }
    pub fn n_time(&self) -> usize {
        self.n_time
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Slice index is taken modulo the period.
    pub fn get(&self, site: usize, slice: usize) -> f64 {
        self.values[(slice % self.n_time) * self.n_sites + site]
    }

    pub fn slice(&self, slice: usize) -> &[f64] {
        let s = slice % self.n_time;
        &self.values[s * self.n_sites..(s + 1) * self.n_sites]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= lambda);
        out
    }

    /// Pointwise product with a site function, g·A.
    pub fn times_sites(&self, g: &[f64]) -> Self {
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            *v *= g[i % self.n_sites];
        }
        out
    }

    /// Cyclic shift u → u + c·Δu.
    pub fn time_shift(&self, c: usize) -> Self {
        let mut out = self.clone();
        for t in 0..self.n_time {
            for s in 0..self.n_sites {
                out.values[t * self.n_sites + s] = self.get(s, t + c);
            }
        }
        out
    }

    /// Time-integrated field Ã(x) = Σ_u A(x,u) Δu.
    pub fn time_integral(&self, dtau: f64) -> Vec<f64> {
        (0..self.n_sites).map(|s| (0..self.n_time).map(|t| self.get(s, t)).sum::<f64>() * dtau).collect()
    }

    /// Rows of (site, slice, value); unspecified entries are zero.
    pub fn from_rows(grid: &GridSpec, rows: &[(usize, usize, f64)], kind: FieldKind) -> Result<Self> {
        let mut values = vec![0.0; grid.spacetime_len()];
        for &(site, slice, v) in rows {
            if site >= grid.total_sites() || slice >= grid.n_time {
                return Err(KmsError::Shape(format!("field row ({site}, {slice}) outside the grid")));
            }
            values[grid.st_index(site, slice)] = v;
        }
        Self::new(grid, values, kind)
    }
}
