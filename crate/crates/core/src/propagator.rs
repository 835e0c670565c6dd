//! Free thermal propagator Δ^β(u) = e^{-uK}/(1 - e^{-βK}), Bose factors,
//! periodized heat kernels, the Wick constant and the norm-state weight sum.

use crate::error::{domain, KmsError, Result};
use crate::fft::SiteFft;
use crate::model::{polylog_general, GridSpec, ModelParams};
use crate::scalar::Real;
use nalgebra::DMatrix;
use serde::Serialize;

/// (B₋, B₊) = (1/(1-e^{-βK}), 1/(e^{βK}-1)).
pub fn bose_factors<T: Real>(k_val: T, beta: T) -> Result<(T, T)> {
    if !(k_val > T::zero()) || !k_val.is_finite() {
        return domain(format!("Bose factors need K > 0, got {:?}", k_val));
    }
    if !(beta > T::zero()) {
        return domain("beta must be positive");
    }
    let x = beta * k_val;
    let b_minus = T::one() / -(-x).exp_m1();
    let b_plus = T::one() / x.exp_m1();
    Ok((b_minus, b_plus))
}

/// K(p) = p²/2m - μ.
pub fn dispersion<T: Real>(p_sq: T, mass: T, mu: T) -> T {
    p_sq / (T::lit(2.0) * mass) - mu
}

/// One-axis periodized heat kernel Σ_w (m/2πτ)^{1/2} exp(-m(x+wL)²/2τ).
pub fn heat_kernel_axis<T: Real>(x: T, tau: T, mass: T, length: T) -> T {
    let two = T::lit(2.0);
    let pref = (mass / (two * T::PI() * tau)).sqrt();
    let x0 = x - length * (x / length + T::lit(0.5)).floor();
    // images out to where the Gaussian factor drops below e^{-45}
    let reach = ((T::lit(90.0) * tau / mass).sqrt() / length).ceil().to_i64().unwrap_or(0) + 1;
    let mut s = T::zero();
    for w in -reach..=reach {
        let y = x0 + T::from_i64(w).unwrap() * length;
        s = s + (-mass * y * y / (two * tau)).exp();
    }
    pref * s
}

/// Periodized normalized heat kernel of e^{-τ p²/2m} in d dimensions.
pub fn heat_kernel<T: Real>(disp: &[T], tau: T, mass: T, lengths: &[T]) -> T {
    disp.iter()
        .zip(lengths)
        .fold(T::one(), |acc, (&x, &l)| acc * heat_kernel_axis(x, tau, mass, l))
}

/// Normalization of the momentum measure in the Wick constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
pub enum MomentumMeasure {
    /// ∫ d^d p, read literally.
    #[default]
    Plain,
    /// ∫ d^d p / (2π)^d.
    TwoPi,
}

/// c_β = ∫ d^d p e^{-β(p²/2m-μ)}/(1-e^{-β(p²/2m-μ)}) = (2πm/β)^{d/2} Li_{d/2}(e^{βμ}).
pub fn wick_constant<T: Real>(beta: T, mass: T, mu: T, dim: usize, measure: MomentumMeasure) -> Result<T> {
    if !(mu < T::zero()) {
        return domain(format!("Wick constant needs mu < 0, got {:?}", mu));
    }
    let two_pi = T::lit(2.0) * T::PI();
    let half_d = T::lit(dim as f64 / 2.0);
    let li = polylog_general(half_d, (beta * mu).exp())?;
    let mut c = (two_pi * mass / beta).powf(half_d) * li;
    if measure == MomentumMeasure::TwoPi {
        c = c / two_pi.powi(dim as i32);
    }
    Ok(c)
}

/// Σ_{n≥1} e^{βμ̃̃n} (m/2πβn)^{d/2} = (m/2πβ)^{d/2} Li_{d/2}(e^{βμ̃̃}).
pub fn weight_sum<T: Real>(beta: T, mass: T, mu_rr: T, dim: usize) -> Result<T> {
    if !(mu_rr < T::zero()) {
        return domain(format!("weight sum needs mu_rr < 0, got {:?}", mu_rr));
    }
    let half_d = T::lit(dim as f64 / 2.0);
    let li = polylog_general(half_d, (beta * mu_rr).exp())?;
    Ok((mass / (T::lit(2.0) * T::PI() * beta)).powf(half_d) * li)
}

pub fn wick_constant_for(params: &ModelParams, dim: usize) -> Result<f64> {
    wick_constant(params.beta, params.mass, params.mu, dim, MomentumMeasure::Plain)
}

pub fn weight_sum_for(params: &ModelParams, dim: usize) -> Result<f64> {
    weight_sum(params.beta, params.mass, params.mu_rr, dim)
}

/// Winding cutoff with e^{βμ n_max} < 1e-12.
pub fn auto_windings(beta: f64, mu: f64) -> usize {
    let n = (1e-12f64.ln() / (beta * mu)).ceil();
    (n.max(1.0) as usize).max(1)
}

/// Free propagator on a grid: Δ̂^β(u_j, p) for u_j = jΔu, j < M.
#[derive(Clone, Debug)]
pub struct PropagatorKernel {
    pub grid: GridSpec,
    pub beta: f64,
    pub mu_eff: f64,
    pub mass: f64,
    k_vals: Vec<f64>,
    multiplier: Vec<f64>,
}

impl PropagatorKernel {
    pub fn build(params: &ModelParams, grid: &GridSpec) -> Result<Self> {
        Self::build_with_mu(params, grid, params.mu_eff())
    }

    pub fn build_with_mu(params: &ModelParams, grid: &GridSpec, mu_eff: f64) -> Result<Self> {
        if !(mu_eff < 0.0) {
            return domain(format!("kernel needs mu_eff < 0, got {mu_eff}"));
        }
        let np = grid.total_sites();
        let k_vals: Vec<f64> = (0..np).map(|s| dispersion(grid.momentum_sq(s), params.mass, mu_eff)).collect();
        let m = grid.n_time;
        let beta = params.beta;
        let mut multiplier = vec![0.0; m * np];
        for j in 0..m {
            let u = grid.time(j);
            for (p, &k) in k_vals.iter().enumerate() {
                multiplier[j * np + p] = (-u * k).exp() / -(-beta * k).exp_m1();
            }
        }
        Ok(PropagatorKernel { grid: grid.clone(), beta, mu_eff, mass: params.mass, k_vals, multiplier })
    }

    pub fn n_momenta(&self) -> usize {
        self.k_vals.len()
    }
    pub fn k_values(&self) -> &[f64] {
        &self.k_vals
    }
    pub fn k_min(&self) -> f64 {
        self.k_vals.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Tabulated value at slice j (periodic in j); j ≡ 0 gives B₋.
    pub fn at_slice(&self, j: usize, p: usize) -> f64 {
        self.multiplier[(j % self.grid.n_time) * self.n_momenta() + p]
    }

    /// Δ̂^β(u,p) for any real u, extended periodically; u ≡ 0 gives the 0⁺ value B₋.
    pub fn value(&self, u: f64, p: usize) -> f64 {
        let r = u.rem_euclid(self.beta);
        let k = self.k_vals[p];
        (-r * k).exp() / -(-self.beta * k).exp_m1()
    }

    /// Left limit u → u⁻; at multiples of β this is B₊.
    pub fn value_left(&self, u: f64, p: usize) -> f64 {
        let mut r = u.rem_euclid(self.beta);
        if r == 0.0 {
            r = self.beta;
        }
        let k = self.k_vals[p];
        (-r * k).exp() / -(-self.beta * k).exp_m1()
    }

    /// Value used for a slice separation r in the space-time kernel: equal
    /// slices take the θ(0) = 0 branch, B₊.
    pub fn ordered(&self, r: usize, p: usize) -> f64 {
        let r = r % self.grid.n_time;
        if r == 0 {
            self.at_slice(0, p) - 1.0
        } else {
            self.at_slice(r, p)
        }
    }

    pub fn bose(&self, p: usize) -> (f64, f64) {
        bose_factors(self.k_vals[p], self.beta).expect("K > 0 on the grid")
    }

    /// Multiplier vector at time u (0 < u ≤ β uses the formula literally).
    pub fn multiplier_at(&self, u: f64) -> Vec<f64> {
        self.k_vals.iter().map(|&k| (-u * k).exp() / -(-self.beta * k).exp_m1()).collect()
    }

    /// Real-space kernel Δ^β(x - 0; u) on all sites by inverse FFT, 0 < u ≤ β.
    pub fn position_kernel_fft(&self, u: f64) -> Vec<f64> {
        let fft = SiteFft::new(&self.grid);
        fft.kernel_from_multiplier(&self.multiplier_at(u), self.grid.volume())
    }

    /// Diagonal density B₊(x, x) = (1/V) Σ_p B₊(p).
    pub fn density(&self) -> f64 {
        self.k_vals.iter().map(|&k| 1.0 / (self.beta * k).exp_m1()).sum::<f64>() / self.grid.volume()
    }

    /// Largest omitted Fourier weight when comparing with the continuum: e^{-u K(p_max)}·B₋.
    pub fn aliasing_bound(&self, u: f64) -> f64 {
        let kmax = self.k_vals.iter().cloned().fold(0.0, f64::max);
        (-u * kmax).exp() / -(-self.beta * kmax).exp_m1()
    }

    /// Site operator with Fourier multiplier m: entries (1/N) Σ_p e^{ip(x-y)} m(p).
    /// Dividing by the cell volume gives the kernel.
    pub fn site_operator(&self, mult: &[f64]) -> DMatrix<f64> {
        let grid = &self.grid;
        let n = grid.total_sites();
        let fft = SiteFft::new(grid);
        let col = fft.kernel_from_multiplier(mult, n as f64);
        DMatrix::from_fn(n, n, |x, y| col[grid.diff_site(x, y)])
    }

    /// Space-time quadrature operator a^dΔu·Δ^β with θ(0) = 0 on equal slices.
    pub fn spacetime_operator(&self) -> DMatrix<f64> {
        let n = self.n_momenta();
        let m = self.grid.n_time;
        let du = self.grid.dtau();
        let blocks: Vec<DMatrix<f64>> = (0..m)
            .map(|r| {
                let mult: Vec<f64> = (0..n).map(|p| du * self.ordered(r, p)).collect();
                self.site_operator(&mult)
            })
            .collect();
        let mut g = DMatrix::zeros(n * m, n * m);
        for j in 0..m {
            for k in 0..m {
                g.view_mut((j * n, k * n), (n, n)).copy_from(&blocks[(k + m - j) % m]);
            }
        }
        g
    }

    /// Exact inverse of `spacetime_operator`: the discrete ∂_u + K,
    /// (e^{ΔuK} f_{k-1} - f_k)/Δu on slice k.
    pub fn generator(&self) -> DMatrix<f64> {
        let n = self.n_momenta();
        let m = self.grid.n_time;
        let du = self.grid.dtau();
        let step: Vec<f64> = self.k_vals.iter().map(|&k| (du * k).exp() / du).collect();
        let e = self.site_operator(&step);
        let mut x = DMatrix::zeros(n * m, n * m);
        for k in 0..m {
            let prev = (k + m - 1) % m;
            let mut blk = x.view_mut((k * n, prev * n), (n, n));
            blk += &e;
            for i in 0..n {
                x[(k * n + i, k * n + i)] -= 1.0 / du;
            }
        }
        x
    }

    /// Multiplier of the discrete generator on time-constant functions, (e^{ΔuK} - 1)/Δu.
    pub fn generator_constant_multiplier(&self) -> Vec<f64> {
        let du = self.grid.dtau();
        self.k_vals.iter().map(|&k| (du * k).exp_m1() / du).collect()
    }

    /// Operator norm of the quadrature operator a^dΔu·Δ^β on grid space-time
    /// functions (the p = 0 circulant eigenvalue).
    pub fn operator_norm(&self) -> f64 {
        let du = self.grid.dtau();
        self.k_vals
            .iter()
            .map(|&k| {
                let t = (-du * k).exp();
                du * t / (1.0 - t)
            })
            .fold(0.0, f64::max)
    }
}

/// Σ_{n=0}^{n_max} e^{(βn+u)μ} G_d(x-y; βn+u). For u = 0 the θ(0) = 0 value
/// (windings n ≥ 1) is returned.
pub fn position_kernel(kernel: &PropagatorKernel, x: &[f64], y: &[f64], u: f64, n_max: usize) -> Result<f64> {
    if !(0.0..=kernel.beta).contains(&u) {
        return domain(format!("position kernel needs 0 ≤ u ≤ β, got {u}"));
    }
    if n_max < 1 {
        return Err(KmsError::Domain("n_max must be at least 1".into()));
    }
    let u = if u == 0.0 { kernel.beta } else { u };
    let disp: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mut acc = 0.0;
    for n in 0..=n_max {
        let tau = kernel.beta * n as f64 + u;
        acc += (tau * kernel.mu_eff).exp() * heat_kernel(&disp, tau, kernel.mass, &kernel.grid.box_length);
    }
    Ok(acc)
}

/// `position_kernel` with the winding cutoff fixed by the 1e-12 tail rule.
pub fn position_kernel_auto(kernel: &PropagatorKernel, x: &[f64], y: &[f64], u: f64) -> Result<f64> {
    position_kernel(kernel, x, y, u, auto_windings(kernel.beta, kernel.mu_eff))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bose_examples() {
        let (bm, bp) = bose_factors(std::f64::consts::LN_2, 1.0).unwrap();
        assert!((bm - 2.0).abs() < 1e-14 && (bp - 1.0).abs() < 1e-14);
        let (bm, bp) = bose_factors(60.0f64, 1.0).unwrap();
        assert!((bm - 1.0).abs() < 1e-20 && bp < 1e-25);
        let (bm, _) = bose_factors(1.0, 1.0).unwrap();
        assert!((bm - 1.0 / (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((bm - 1.581977).abs() < 1e-6);
        assert!(bose_factors(0.0, 1.0).is_err());
        assert!(bose_factors(-0.1f32, 1.0).is_err());
    }

    #[test]
    fn jump_is_one_in_both_precisions() {
        for k in [1e-3, 0.1, 1.0, 7.0] {
            let (a, b) = bose_factors::<f64>(k, 2.0).unwrap();
            assert!((a - b - 1.0).abs() < 1e-12);
            let (a, b) = bose_factors(k as f32, 2.0f32).unwrap();
            assert!((a - b - 1.0).abs() < 1e-3 * a.max(1.0));
        }
    }

    #[test]
    fn kernel_values() {
        let grid = GridSpec::cube(1, 4.0, 8, 4, 1.0).unwrap();
        let p = ModelParams::new(1.0, 1.0, -std::f64::consts::LN_2, std::f64::consts::LN_2, 0.0, 1.0).unwrap();
        let k = PropagatorKernel::build(&p, &grid).unwrap();
        // p = 0 bin has βK = ln 2
        assert!((k.at_slice(0, 0) - 2.0).abs() < 1e-14);
        assert!((k.ordered(0, 0) - 1.0).abs() < 1e-14);
        assert_eq!(k.at_slice(5, 3), k.at_slice(1, 3));
        // K = 1 at p = 0 when μ = -1: u = β/2 value
        let p1 = ModelParams::simple(1.0, 1.0);
        let k1 = PropagatorKernel::build(&p1, &grid).unwrap();
        let want = (-0.5f64).exp() / (1.0 - (-1.0f64).exp());
        assert!((k1.at_slice(2, 0) - want).abs() < 1e-15);
        assert!((want - 0.959_517_375_667_471_9).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonnegative_mu() {
        let grid = GridSpec::cube(1, 4.0, 8, 4, 1.0).unwrap();
        let p = ModelParams::simple(1.0, 1.0);
        assert!(PropagatorKernel::build_with_mu(&p, &grid, 0.0).is_err());
    }

    #[test]
    fn radial_gaussian_constant() {
        let pi = std::f64::consts::PI;
        let lhs = 4.0 * pi * (2.0 * pi).powi(-3) * (pi / 2.0).sqrt();
        assert!((lhs - (2.0 * pi).powf(-1.5)).abs() < 1e-16);
    }

    #[test]
    fn weight_sum_matches_direct_summation() {
        let direct: f64 = (1..2000)
            .map(|n| (-0.1 * n as f64).exp() * (2.0 * std::f64::consts::PI * n as f64).powf(-1.5))
            .sum();
        let w = weight_sum(1.0, 1.0, -0.1, 3).unwrap();
        assert!((w - direct).abs() < 1e-12 * direct);
        // leading-term limit
        let w = weight_sum(1.0, 1.0, -40.0, 3).unwrap();
        let lead = (2.0 * std::f64::consts::PI).powf(-1.5) * (-40.0f64).exp();
        assert!((w - lead).abs() < 1e-15 * lead);
    }

    #[test]
    fn wick_constant_limits_and_monotonicity() {
        assert!(wick_constant(1.0, 1.0, -200.0, 3, MomentumMeasure::Plain).unwrap() < 1e-80);
        let mut prev = f64::INFINITY;
        for i in 1..30 {
            let c = wick_constant(0.2 * i as f64, 1.0, -0.3, 3, MomentumMeasure::Plain).unwrap();
            assert!(c < prev);
            prev = c;
        }
        assert!(wick_constant(1.0, 1.0, 0.0, 3, MomentumMeasure::Plain).is_err());
    }

    #[test]
    fn heat_kernel_normalized_and_semigroup() {
        // ∫ G = 1 over the box; G(t)*G(s) = G(t+s)
        let l = 5.0;
        let n = 400;
        let h = l / n as f64;
        let total: f64 = (0..n).map(|i| heat_kernel_axis(i as f64 * h, 0.7, 1.3, l)).sum::<f64>() * h;
        assert!((total - 1.0).abs() < 1e-12);
        let conv: f64 = (0..n)
            .map(|i| heat_kernel_axis(1.1 - i as f64 * h, 0.3, 1.3, l) * heat_kernel_axis(i as f64 * h, 0.4, 1.3, l))
            .sum::<f64>()
            * h;
        assert!((conv - heat_kernel_axis(1.1, 0.7, 1.3, l)).abs() < 1e-10);
    }

    #[test]
    fn position_kernel_is_symmetric_and_free_at_large_negative_mu() {
        let grid = GridSpec::cube(2, 3.0, 6, 4, 1.0).unwrap();
        let p = ModelParams::simple(1.0, 0.4);
        let k = PropagatorKernel::build(&p, &grid).unwrap();
        let a = position_kernel_auto(&k, &[0.5, 1.0], &[2.0, 0.25], 0.6).unwrap();
        let b = position_kernel_auto(&k, &[2.0, 0.25], &[0.5, 1.0], 0.6).unwrap();
        assert!((a - b).abs() < 1e-15 * a);
        let pf = ModelParams::simple(1.0, 80.0);
        let kf = PropagatorKernel::build(&pf, &grid).unwrap();
        let v = position_kernel(&kf, &[0.0, 0.0], &[0.3, 0.0], 0.5, 3).unwrap();
        let free = (-0.5 * 80.0f64).exp() * heat_kernel(&[-0.3, 0.0], 0.5, 1.0, &[3.0, 3.0]);
        assert!((v - free).abs() < 1e-12 * free);
        assert!(position_kernel(&k, &[0.0, 0.0], &[0.0, 0.0], 1.5, 3).is_err());
    }

    #[test]
    fn fft_kernel_matches_winding_sum() {
        let grid = GridSpec::cube(1, 8.0, 32, 8, 1.0).unwrap();
        let p = ModelParams::simple(1.0, 0.5);
        let k = PropagatorKernel::build(&p, &grid).unwrap();
        for u in [0.25, 0.5, 1.0] {
            assert!(k.aliasing_bound(u) < 1e-8);
            let fft = k.position_kernel_fft(u);
            for (site, &v) in fft.iter().enumerate() {
                let x = grid.coord(site);
                let w = position_kernel_auto(&k, &x, &[0.0], u).unwrap();
                assert!((v - w).abs() < 1e-8, "u={u} site={site}: {v} vs {w}");
            }
        }
        // diagonal at u = β is the density
        let fft = k.position_kernel_fft(1.0);
        assert!((fft[0] - k.density()).abs() < 1e-14);
    }

    #[test]
    fn generator_inverts_spacetime_operator() {
        let grid = GridSpec::cube(1, 3.0, 5, 6, 1.3).unwrap();
        let p = ModelParams::simple(1.3, 0.6);
        let k = PropagatorKernel::build(&p, &grid).unwrap();
        let g = k.spacetime_operator();
        let x = k.generator();
        let id = &g * &x;
        assert!((id - DMatrix::<f64>::identity(30, 30)).abs().max() < 1e-11);
        // diagonal block is B₊ times a^dΔu
        let n = 5;
        let bplus: f64 = (0..n).map(|q| k.bose(q).1).sum::<f64>() / n as f64;
        assert!((g[(0, 0)] - grid.dtau() * bplus).abs() < 1e-14);
    }
}
