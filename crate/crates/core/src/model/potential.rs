use super::grid::{wrap_signed, GridSpec};
use crate::error::{KmsError, Result};
use crate::fft::SiteFft;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Symmetric two-body potential v(x).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Potential {
    /// v0 · Σ_images exp(-|x|²/2σ²)
    Gaussian { width: f64, height: f64 },
    /// Normalized self-convolution of a ball of radius r/2; support radius r.
    Bump { radius: f64, height: f64 },
    /// Values v(x_i - 0) on the grid sites.
    Tabulated { values: Vec<f64> },
}

/// Overlap measure of two balls of radius R at distance r (d = 1, 2, 3).
fn ball_overlap(dim: usize, big_r: f64, r: f64) -> f64 {
    if r >= 2.0 * big_r {
        return 0.0;
    }
    match dim {
        1 => 2.0 * big_r - r,
        2 => 2.0 * big_r * big_r * (r / (2.0 * big_r)).acos() - 0.5 * r * (4.0 * big_r * big_r - r * r).sqrt(),
        _ => std::f64::consts::PI * (4.0 * big_r + r) * (2.0 * big_r - r).powi(2) / 12.0,
    }
}

impl Potential {
    pub fn zero() -> Self {
        Potential::Gaussian { width: 1.0, height: 0.0 }
    }

    /// Continuum evaluation at a displacement, periodic in the box.
    pub fn eval(&self, grid: &GridSpec, disp: &[f64]) -> f64 {
        match self {
            Potential::Gaussian { width, height } => {
                if *height == 0.0 {
                    return 0.0;
                }
                let mut prod = *height;
                for (a, &x) in disp.iter().enumerate() {
                    let l = grid.box_length[a];
                    let x0 = wrap_signed(x, l);
                    let reach = (12.0 * width / l).ceil() as i64 + 1;
                    let mut s = 0.0;
                    for w in -reach..=reach {
                        let y = x0 + w as f64 * l;
                        s += (-y * y / (2.0 * width * width)).exp();
                    }
                    prod *= s;
                }
                prod
            }
            Potential::Bump { radius, height } => {
                let dim = grid.dim();
                let big_r = radius / 2.0;
                let norm = ball_overlap(dim, big_r, 0.0);
                // sum over the few images that can reach the support
                let reach: Vec<i64> = (0..dim).map(|a| (radius / grid.box_length[a]).ceil() as i64).collect();
                let mut total = 0.0;
                let mut w = vec![0i64; dim];
                let count: i64 = reach.iter().map(|r| 2 * r + 1).product();
                for c in 0..count {
                    let mut rem = c;
                    for a in 0..dim {
                        let span = 2 * reach[a] + 1;
                        w[a] = rem % span - reach[a];
                        rem /= span;
                    }
                    let r2: f64 = (0..dim)
                        .map(|a| {
                            let y = wrap_signed(disp[a], grid.box_length[a]) + w[a] as f64 * grid.box_length[a];
                            y * y
                        })
                        .sum();
                    total += ball_overlap(dim, big_r, r2.sqrt());
                }
                height * total / norm
            }
            Potential::Tabulated { values } => interpolate_periodic(grid, values, disp),
        }
    }

    /// v(x_i) for every site (displacement from the origin site).
    pub fn on_grid(&self, grid: &GridSpec) -> Result<Vec<f64>> {
        match self {
            Potential::Tabulated { values } => {
                if values.len() != grid.total_sites() {
                    return Err(KmsError::Shape(format!(
                        "tabulated potential has {} values, grid has {} sites",
                        values.len(),
                        grid.total_sites()
                    )));
                }
                Ok(values.clone())
            }
            _ => Ok((0..grid.total_sites()).map(|s| self.eval(grid, &grid.min_image(s, 0))).collect()),
        }
    }

    /// Discrete transform Σ_x v(x) e^{-ipx} a^d at every grid momentum.
    pub fn transform(&self, grid: &GridSpec) -> Result<Vec<f64>> {
        let vals = self.on_grid(grid)?;
        let fft = SiteFft::new(grid);
        let mut buf: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut buf);
        let a = grid.cell_volume();
        Ok(buf.iter().map(|z| z.re * a).collect())
    }

    /// Checks symmetry, v(0) ≥ v(x) and positive type on the grid.
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        match self {
            Potential::Gaussian { width, height } if !(*width > 0.0 && *height >= 0.0) => {
                return Err(KmsError::Invariant("gaussian potential needs width > 0 and height ≥ 0".into()))
            }
            Potential::Bump { radius, height } if !(*radius > 0.0 && *height >= 0.0) => {
                return Err(KmsError::Invariant("bump potential needs radius > 0 and height ≥ 0".into()))
            }
            _ => {}
        }
        let vals = self.on_grid(grid)?;
        let v0 = vals[0];
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for s in 0..grid.total_sites() {
            let mirror = grid.diff_site(0, s);
            if (vals[s] - vals[mirror]).abs() > 1e-12 * scale {
                return Err(KmsError::Invariant("potential symmetry v(x) = v(-x)".into()));
            }
            if vals[s] > v0 + 1e-12 * scale {
                return Err(KmsError::Invariant("potential maximum v(0) ≥ v(x)".into()));
            }
        }
        let vhat = self.transform(grid)?;
        let floor = -1e-12 * scale.max(v0) * grid.volume();
        if vhat.iter().any(|&w| w < floor) {
            return Err(KmsError::Invariant("positive type: v̂(p) ≥ 0 on all grid momenta".into()));
        }
        Ok(())
    }
}

/// Multilinear periodic interpolation of site values at a point.
pub fn interpolate_periodic(grid: &GridSpec, values: &[f64], x: &[f64]) -> f64 {
    let d = grid.dim();
    let mut base = vec![0i64; d];
    let mut frac = vec![0.0; d];
    for a in 0..d {
        let t = x[a] / grid.spacing(a);
        let f = t.floor();
        base[a] = f as i64;
        frac[a] = t - f;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut idx = vec![0usize; d];
        for a in 0..d {
            let bit = (corner >> a) & 1;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            idx[a] = (base[a] + bit as i64).rem_euclid(grid.n_sites[a] as i64) as usize;
        }
        if w != 0.0 {
            acc += w * values[grid.flat_index(&idx)];
        }
    }
    acc
}
