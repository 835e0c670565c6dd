use super::grid::{wrap_signed, GridSpec};
use crate::error::{KmsError, Result};
use serde::{Deserialize, Serialize};

/// Which norm of g enters the condensate term of the convergence bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GNorm {
    #[default]
    L1,
    L2,
    Sup,
}

/// Adiabatic cutoff g and the auxiliary cutoffs χ, χ₁, χ₂ (all site functions).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub g: Vec<f64>,
    pub chi: Vec<f64>,
    pub chi1: Vec<f64>,
    pub chi2: Vec<f64>,
}

fn smooth_step(t: f64) -> f64 {
    // 1 for t ≤ 0, 0 for t ≥ 1, C^∞ in between
    let psi = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        psi(1.0 - t) / (psi(1.0 - t) + psi(t))
    }
}

/// Indicator of supp(g) grown by one site in every axis direction.
pub fn default_chi(grid: &GridSpec, g: &[f64]) -> Vec<f64> {
    let mut chi = vec![0.0; g.len()];
    for s in 0..g.len() {
        if g[s] > 0.0 {
            chi[s] = 1.0;
            let idx = grid.multi_index(s);
            for a in 0..grid.dim() {
                for step in [1, grid.n_sites[a] - 1] {
                    let mut nb = idx.clone();
                    nb[a] = (nb[a] + step) % grid.n_sites[a];
                    chi[grid.flat_index(&nb)] = 1.0;
                }
            }
        }
    }
    chi
}

impl Cutoff {
    pub fn new(grid: &GridSpec, g: Vec<f64>, chi: Vec<f64>, chi1: Vec<f64>, chi2: Vec<f64>) -> Result<Self> {
        let n = grid.total_sites();
        for (name, f) in [("g", &g), ("chi", &chi), ("chi1", &chi1), ("chi2", &chi2)] {
            if f.len() != n {
                return Err(KmsError::Shape(format!("cutoff {name} has {} values, grid has {n} sites", f.len())));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(KmsError::Invariant(format!("cutoff {name} entries must be finite")));
            }
        }
        if g.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(KmsError::Invariant("0 ≤ g ≤ 1".into()));
        }
        for (name, f) in [("chi", &chi), ("chi1", &chi1), ("chi2", &chi2)] {
            if f.iter().any(|&v| v < 0.0) {
                return Err(KmsError::Invariant(format!("{name} ≥ 0")));
            }
            if g.iter().zip(f.iter()).any(|(&gv, &cv)| gv > 0.0 && (cv - 1.0).abs() > 1e-12) {
                return Err(KmsError::Invariant(format!("{name} ≡ 1 on supp(g)")));
            }
        }
        Ok(Cutoff { g, chi, chi1, chi2 })
    }

    /// χ's default to the one-site dilation of supp(g).
    pub fn from_g(grid: &GridSpec, g: Vec<f64>) -> Result<Self> {
        let chi = default_chi(grid, &g);
        Self::new(grid, g, chi.clone(), chi.clone(), chi)
    }

    pub fn ones(grid: &GridSpec) -> Self {
        let n = grid.total_sites();
        Cutoff { g: vec![1.0; n], chi: vec![1.0; n], chi1: vec![1.0; n], chi2: vec![1.0; n] }
    }

    /// g = 1 within `radius` of the box centre, smooth decay to 0 over `ramp`.
    pub fn plateau(grid: &GridSpec, radius: f64, ramp: f64) -> Result<Self> {
        if !(radius >= 0.0 && ramp >= 0.0) {
            return Err(KmsError::Invariant("plateau radius and ramp must be nonnegative".into()));
        }
        let centre: Vec<f64> = grid.box_length.iter().map(|l| 0.5 * l).collect();
        let g = (0..grid.total_sites())
            .map(|s| {
                let x = grid.coord(s);
                let r = (0..grid.dim())
                    .map(|a| wrap_signed(x[a] - centre[a], grid.box_length[a]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if ramp == 0.0 {
                    if r <= radius { 1.0 } else { 0.0 }
                } else {
                    smooth_step((r - radius) / ramp)
                }
            })
            .collect();
        Self::from_g(grid, g)
    }

    pub fn g_l1(&self, grid: &GridSpec) -> f64 {
        self.g.iter().map(|v| v.abs()).sum::<f64>() * grid.cell_volume()
    }

    pub fn g_norm(&self, grid: &GridSpec, which: GNorm) -> f64 {
        match which {
            GNorm::L1 => self.g_l1(grid),
            GNorm::L2 => (self.g.iter().map(|v| v * v).sum::<f64>() * grid.cell_volume()).sqrt(),
            GNorm::Sup => self.g.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }
}
