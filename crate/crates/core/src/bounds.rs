//! Closed-form estimates behind the convergence theorem: the E-bound, the
//! condensate bound, the Gaussian moment lemma, the Stirling-ratio estimate,
//! the convergence region and β₀.

use crate::error::{domain, KmsError, Result};
use crate::model::{polylog_general, ModelParams};
use crate::scalar::Real;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

fn positive<T: Real>(name: &str, x: T) -> Result<()> {
    if x > T::zero() && x.is_finite() {
        Ok(())
    } else {
        domain(format!("{name} must be positive, got {:?}", x))
    }
}

fn nonnegative<T: Real>(name: &str, x: T) -> Result<()> {
    if x >= T::zero() && x.is_finite() {
        Ok(())
    } else {
        domain(format!("{name} must be nonnegative, got {:?}", x))
    }
}

/// Every factor that goes into C̃.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CtildeReport {
    /// (2π)^{-d/2}
    pub c_norm: f64,
    /// Li_{d/2}(e^{βμ̃̃})
    pub polylog: f64,
    /// C̃(βμ̃̃) = (2π)^{-d/2} Li_{d/2}(e^{βμ̃̃})
    pub c_state: f64,
    /// √π from the Gaussian moment lemma
    pub lemma_factor: f64,
    /// √(2/e) from the Stirling-ratio estimate
    pub stirling_factor: f64,
    /// c_state · lemma_factor · stirling_factor
    pub c_tilde: f64,
}

/// C̃(βμ̃̃) = (2π)^{-d/2} Li_{d/2}(e^{βμ̃̃}).
pub fn ctilde_state<T: Real>(beta: T, mu_rr: T, dim: usize) -> Result<T> {
    if !(mu_rr < T::zero()) {
        return domain("C̃ needs mu_rr < 0");
    }
    let half_d = T::lit(dim as f64 / 2.0);
    let c = (T::lit(2.0) * T::PI()).powf(-half_d);
    Ok(c * polylog_general(half_d, (beta * mu_rr).exp())?)
}

/// C̃ with the rescaling chain of the E-bound proof.
pub fn estimate_ctilde(params: &ModelParams, dim: usize) -> Result<CtildeReport> {
    let half_d = dim as f64 / 2.0;
    let c_norm = (2.0 * std::f64::consts::PI).powf(-half_d);
    let polylog = polylog_general(half_d, (params.beta * params.mu_rr).exp())?;
    if !(params.mu_rr < 0.0) {
        return domain("C̃ needs mu_rr < 0");
    }
    let c_state = c_norm * polylog;
    let lemma_factor = std::f64::consts::PI.sqrt();
    let stirling_factor = (2.0 / std::f64::consts::E).sqrt();
    Ok(CtildeReport { c_norm, polylog, c_state, lemma_factor, stirling_factor, c_tilde: c_state * lemma_factor * stirling_factor })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EBound {
    pub e: f64,
    /// E < ln 2 (strict).
    pub convergent: bool,
}

/// E = C̃ √v(0) ‖g‖₁ ξ β^{(1-d)/2}.
pub fn e_bound_value<T: Real>(c_tilde: T, beta: T, v0: T, g_l1: T, xi: T, dim: usize) -> Result<T> {
    positive("beta", beta)?;
    nonnegative("v0", v0)?;
    nonnegative("g_l1", g_l1)?;
    nonnegative("c_tilde", c_tilde)?;
    if !(xi > T::zero() && xi <= T::one()) {
        return domain("xi must lie in (0, 1]");
    }
    let expo = T::lit((1.0 - dim as f64) / 2.0);
    Ok(c_tilde * v0.sqrt() * g_l1 * xi * beta.powf(expo))
}

pub fn e_bound(c_tilde: f64, beta: f64, v0: f64, g_l1: f64, xi: f64, dim: usize) -> Result<EBound> {
    let e = e_bound_value(c_tilde, beta, v0, g_l1, xi, dim)?;
    Ok(EBound { e, convergent: e < std::f64::consts::LN_2 })
}

/// Interval (2 - e^E, e^E) the partition function must fall into.
pub fn partition_interval(e: f64) -> (f64, f64) {
    (2.0 - e.exp(), e.exp())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CondensateBound {
    /// exp(2βφ₀²‖Kχ₁‖₂‖χ₂‖₂ξ)
    pub chi_form: f64,
    /// exp(2βφ₀²εξ)
    pub eps_form: f64,
    /// 1 + e^{-ṽ(g,g)φ₀²/2} - exp(2βφ₀²εξ), with ṽ(g,g) carrying its factor β
    pub lower: f64,
}

pub fn condensate_bound(
    beta: f64,
    phi0: f64,
    epsilon: f64,
    xi: f64,
    norm_kchi1: f64,
    norm_chi2: f64,
    vtilde_gg: f64,
) -> Result<CondensateBound> {
    positive("beta", beta)?;
    for (n, x) in [("phi0", phi0.abs()), ("epsilon", epsilon), ("xi", xi), ("‖Kχ₁‖", norm_kchi1), ("‖χ₂‖", norm_chi2), ("vtilde_gg", vtilde_gg)] {
        nonnegative(n, x)?;
    }
    let p2 = phi0 * phi0;
    let chi_form = (2.0 * beta * p2 * norm_kchi1 * norm_chi2 * xi).exp();
    let eps_form = (2.0 * beta * p2 * epsilon * xi).exp();
    let lower = 1.0 + (-0.5 * vtilde_gg * p2).exp() - eps_form;
    Ok(CondensateBound { chi_form, eps_form, lower })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LemmaCheck {
    pub k: usize,
    pub lhs_mc: f64,
    pub lhs_std_error: f64,
    pub rhs: f64,
    pub pass: bool,
    pub det: f64,
    pub hadamard_product: f64,
    pub hadamard_ok: bool,
}

/// π^{k/2} k^{-k/2} Γ(k)/Γ(k/2) (βv(0))^{k/2}.
pub fn lemma_rhs(k: usize, beta_v0: f64) -> f64 {
    let kf = k as f64;
    (0.5 * kf * std::f64::consts::PI.ln() - 0.5 * kf * kf.ln() + ln_gamma(kf) - ln_gamma(kf / 2.0) + 0.5 * kf * beta_v0.ln()).exp()
}

/// Monte Carlo of E[Π_j |X_j|], X ~ N(0, η), against the lemma's right-hand
/// side with βv(0) = max_j η_jj. Passes when the estimate is within 3σ below it.
pub fn gaussian_moment_lemma_check(eta: &DMatrix<f64>, trials: usize, seed: u64) -> Result<LemmaCheck> {
    let k = eta.nrows();
    if k == 0 || k > 8 || eta.ncols() != k {
        return Err(KmsError::Domain(format!("η must be square with 1 ≤ k ≤ 8, got {}×{}", k, eta.ncols())));
    }
    if (eta - eta.transpose()).abs().max() > 1e-12 * eta.abs().max() {
        return domain("η must be symmetric");
    }
    let chol = eta.clone().cholesky().ok_or_else(|| KmsError::Domain("η is not positive definite".into()))?;
    let l = chol.l();
    let beta_v0 = (0..k).map(|j| eta[(j, j)]).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    let mut z = nalgebra::DVector::zeros(k);
    for _ in 0..trials {
        for j in 0..k {
            z[j] = StandardNormal.sample(&mut rng);
        }
        let x = &l * &z;
        let p: f64 = x.iter().map(|v| v.abs()).product();
        s += p;
        s2 += p * p;
    }
    let n = trials as f64;
    let mean = s / n;
    let se = ((s2 / n - mean * mean).max(0.0) / n).sqrt();
    let rhs = lemma_rhs(k, beta_v0);
    let det = chol.determinant();
    let hadamard_product: f64 = (0..k).map(|j| eta[(j, j)]).product();
    Ok(LemmaCheck {
        k,
        lhs_mc: mean,
        lhs_std_error: se,
        rhs,
        pass: mean - 3.0 * se <= rhs,
        det,
        hadamard_product,
        hadamard_ok: det <= hadamard_product * (1.0 + 1e-12),
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StirlingRow {
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Γ(k)/(k^{k/2}Γ(k/2)) against (2/e)^{k/2} for k = 1..=k_max.
pub fn stirling_ratio_check(k_max: usize) -> Result<Vec<StirlingRow>> {
    if k_max == 0 || k_max > 200 {
        return Err(KmsError::Limit(format!("k_max must be in 1..=200, got {k_max}")));
    }
    Ok((1..=k_max)
        .map(|k| {
            let kf = k as f64;
            let lhs = (ln_gamma(kf) - 0.5 * kf * kf.ln() - ln_gamma(kf / 2.0)).exp();
            let rhs = (0.5 * kf * (2.0f64.ln() - 1.0)).exp();
            StirlingRow { k, lhs, rhs, holds: lhs <= rhs }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Convergent,
    NotGuaranteed,
}

/// Inputs of the theorem's inequality plus its two verdicts.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RegionPoint {
    pub beta: f64,
    pub phi0: f64,
    pub v0: f64,
    pub g_l1: f64,
    /// ‖g‖ in the εβφ₀²‖g‖ term (the norm selected by the caller)
    pub g_norm: f64,
    /// ṽ(g⊗1, g⊗1), carrying its factor β
    pub vtilde_gg: f64,
    pub epsilon: f64,
    pub c_tilde: f64,
    pub dim: usize,
    pub r: f64,
    pub margin: f64,
    pub verdict: Verdict,
    pub gamma: f64,
    pub intro_margin: f64,
    pub intro_verdict: Verdict,
}

#[derive(Clone, Copy, Debug)]
pub struct RegionInputs {
    pub beta: f64,
    pub phi0: f64,
    pub v0: f64,
    pub g_l1: f64,
    pub g_norm: f64,
    pub vtilde_gg: f64,
    pub epsilon: f64,
    pub c_tilde: f64,
    pub dim: usize,
}

fn verdict(m: f64) -> Verdict {
    if m > 0.0 {
        Verdict::Convergent
    } else {
        Verdict::NotGuaranteed
    }
}

/// Intro-form margin 1 + e^{-φ₀⁴γ/2} - exp(√γ C̃ β^{-d/2}), γ = βv(0)‖g‖₁².
pub fn intro_margin(gamma: f64, phi0: f64, c_tilde: f64, beta: f64, dim: usize) -> f64 {
    1.0 + (-0.5 * phi0.powi(4) * gamma).exp() - (gamma.sqrt() * c_tilde * beta.powf(-(dim as f64) / 2.0)).exp()
}

/// margin = 1 + e^{-φ₀⁴ṽ(g,g)/2} - e^R, R = εβφ₀²‖g‖ + √v(0)‖g‖₁C̃β^{(1-d)/2}.
pub fn region(p: RegionInputs) -> Result<RegionPoint> {
    positive("beta", p.beta)?;
    for (n, x) in [("v0", p.v0), ("g_l1", p.g_l1), ("g_norm", p.g_norm), ("vtilde_gg", p.vtilde_gg), ("epsilon", p.epsilon), ("c_tilde", p.c_tilde)] {
        nonnegative(n, x)?;
    }
    let p2 = p.phi0 * p.phi0;
    let r = p.epsilon * p.beta * p2 * p.g_norm + p.v0.sqrt() * p.g_l1 * p.c_tilde * p.beta.powf((1.0 - p.dim as f64) / 2.0);
    let margin = 1.0 + (-0.5 * p2 * p2 * p.vtilde_gg).exp() - r.exp();
    let gamma = p.beta * p.v0 * p.g_l1 * p.g_l1;
    let im = intro_margin(gamma, p.phi0, p.c_tilde, p.beta, p.dim);
    Ok(RegionPoint {
        beta: p.beta,
        phi0: p.phi0,
        v0: p.v0,
        g_l1: p.g_l1,
        g_norm: p.g_norm,
        vtilde_gg: p.vtilde_gg,
        epsilon: p.epsilon,
        c_tilde: p.c_tilde,
        dim: p.dim,
        r,
        margin,
        verdict: verdict(margin),
        gamma,
        intro_margin: im,
        intro_verdict: verdict(im),
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Beta0 {
    /// Root of √γ C̃ β^{-d/2} = log(1 + e^{-γφ₀⁴/2}) by bisection.
    pub bisection: f64,
    /// (√γ C̃ / log(1 + e^{-γφ₀⁴/2}))^{2/d}.
    pub closed_form: f64,
    /// The printed (γ/C̃ · log(1 + e^{-γφ₀⁴/2}))^{3/2}, for comparison only.
    pub printed: f64,
}

pub fn beta0(gamma: f64, phi0: f64, c_tilde: f64, dim: usize) -> Result<Beta0> {
    positive("gamma", gamma)?;
    positive("c_tilde", c_tilde)?;
    if dim == 0 {
        return domain("dimension must be positive");
    }
    let lg = (-0.5 * gamma * phi0.powi(4)).exp().ln_1p();
    let closed_form = (gamma.sqrt() * c_tilde / lg).powf(2.0 / dim as f64);
    let printed = (gamma / c_tilde * lg).powf(1.5);
    // intro margin is increasing in β at fixed γ, C̃
    let f = |b: f64| intro_margin(gamma, phi0, c_tilde, b, dim);
    let (mut lo, mut hi) = (1e-300f64.max(closed_form * 1e-6), closed_form * 1e6);
    if !(f(lo) <= 0.0 && f(hi) > 0.0) {
        return Err(KmsError::Invariant("β₀ bisection bracket does not straddle the root".into()));
    }
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    Ok(Beta0 { bisection: 0.5 * (lo + hi), closed_form, printed })
}

/// Sub-interval of [lo, hi] where the theorem's verdict holds, found by a
/// sweep and refined by bisection at the two sign changes.
pub fn convergent_interval(base: RegionInputs, vtilde_spatial: f64, ctilde_of_beta: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> Result<Option<(f64, f64)>> {
    let eval = |b: f64| -> Result<f64> {
        Ok(region(RegionInputs { beta: b, vtilde_gg: b * vtilde_spatial, c_tilde: ctilde_of_beta(b), ..base })?.margin)
    };
    let betas: Vec<f64> = (0..points).map(|i| lo * (hi / lo).powf(i as f64 / (points - 1) as f64)).collect();
    let margins: Vec<f64> = betas.iter().map(|&b| eval(b)).collect::<Result<_>>()?;
    let Some(first) = margins.iter().position(|&m| m > 0.0) else { return Ok(None) };
    let last = margins.iter().rposition(|&m| m > 0.0).unwrap();
    let refine = |mut a: f64, mut b: f64, rising: bool| -> Result<f64> {
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let pos = eval(mid)? > 0.0;
            if pos == rising {
                b = mid;
            } else {
                a = mid;
            }
        }
        Ok(0.5 * (a + b))
    };
    let b0 = if first == 0 { betas[0] } else { refine(betas[first - 1], betas[first], true)? };
    let b1 = if last == points - 1 { betas[points - 1] } else { refine(betas[last], betas[last + 1], false)? };
    Ok(Some((b0, b1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn e_bound_examples() {
        let e = e_bound(0.3, 2.0, 0.0, 5.0, 1.0, 3).unwrap();
        assert_eq!(e.e, 0.0);
        assert!(e.convergent);
        let e1 = e_bound(0.3, 2.0, 1.5, 5.0, 0.5, 3).unwrap().e;
        let e2 = e_bound(0.3, 4.0, 1.5, 5.0, 0.5, 3).unwrap().e;
        assert!((e2 - e1 / 2.0).abs() < 1e-15);
        // boundary is strict
        let c = std::f64::consts::LN_2;
        assert!(!e_bound(c, 1.0, 1.0, 1.0, 1.0, 3).unwrap().convergent);
        assert!(e_bound(0.3, -1.0, 1.0, 1.0, 1.0, 3).is_err());
        assert!(e_bound(0.3, 1.0, 1.0, 1.0, 0.0, 3).is_err());
        assert!(e_bound_value(0.3f32, 2.0, 1.5, 5.0, 0.5, 3).unwrap() > 0.0);
    }

    #[test]
    fn ctilde_limits() {
        assert!(ctilde_state(1.0, -200.0, 3).unwrap() < 1e-80);
        let zeta32 = 2.612_375_348_685_488;
        let near = ctilde_state(1.0, -1e-12, 3).unwrap();
        let lim = (2.0 * std::f64::consts::PI).powf(-1.5) * zeta32;
        assert!((near - lim).abs() < 1e-5 * lim);
        let mut prev = 0.0;
        for i in (1..40).rev() {
            let c = ctilde_state(1.0, -0.1 * i as f64, 3).unwrap();
            assert!(c > prev);
            prev = c;
        }
        let r = estimate_ctilde(&ModelParams::simple(1.0, 0.5), 3).unwrap();
        assert!((r.c_tilde - r.c_state * (2.0 * std::f64::consts::PI / std::f64::consts::E).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn condensate_examples() {
        let b = condensate_bound(2.0, 0.0, 0.3, 1.0, 1.0, 1.0, 0.7).unwrap();
        assert_eq!((b.eps_form, b.lower), (1.0, 1.0));
        let b = condensate_bound(2.0, 1.3, 0.3, 0.0, 1.0, 1.0, 0.7).unwrap();
        assert_eq!(b.eps_form, 1.0);
        let base = condensate_bound(1.0, 1.0, 0.2, 0.5, 1.0, 1.0, 0.0).unwrap().eps_form.ln();
        let dbl = condensate_bound(2.0, 1.0, 0.2, 0.5, 1.0, 1.0, 0.0).unwrap().eps_form.ln();
        assert!((dbl - 2.0 * base).abs() < 1e-15);
        let phi = condensate_bound(1.0, 2.0f64.sqrt(), 0.2, 0.5, 1.0, 1.0, 0.0).unwrap().eps_form.ln();
        assert!((phi - 2.0 * base).abs() < 1e-14);
    }

    #[test]
    fn lemma_one_dimensional_and_diagonal() {
        let lam = 0.8;
        let c = gaussian_moment_lemma_check(&DMatrix::from_element(1, 1, lam), 200_000, 3).unwrap();
        let exact = (2.0 / std::f64::consts::PI).sqrt() * lam.sqrt();
        assert!((c.lhs_mc - exact).abs() < 4.0 * c.lhs_std_error);
        assert!((c.rhs - lam.sqrt()).abs() < 1e-12);
        assert!(c.pass);
        for k in 1..=6 {
            let bv = 0.5;
            let eta = DMatrix::identity(k, k) * bv;
            let c = gaussian_moment_lemma_check(&eta, 100_000, 11).unwrap();
            let exact = ((2.0 / std::f64::consts::PI) * bv).powf(k as f64 / 2.0);
            assert!((c.lhs_mc - exact).abs() < 5.0 * c.lhs_std_error);
            assert!(c.pass && c.hadamard_ok);
        }
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(gaussian_moment_lemma_check(&bad, 10, 0).is_err());
    }

    #[test]
    fn lemma_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 2..=6 {
            let b = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
            let eta = &b * b.transpose() + DMatrix::identity(k, k) * 0.1;
            let c = gaussian_moment_lemma_check(&eta, 50_000, k as u64).unwrap();
            assert!(c.pass, "{c:?}");
            assert!(c.hadamard_ok);
        }
    }

    #[test]
    fn stirling_examples() {
        let t = stirling_ratio_check(200).unwrap();
        assert!((t[1].lhs - 0.5).abs() < 1e-14);
        assert!((t[1].rhs - 2.0 / std::f64::consts::E).abs() < 1e-14);
        assert!((t[3].lhs - 0.375).abs() < 1e-14);
        assert!(t[1..].iter().all(|r| r.holds));
        // ratio of the sides is monotone for large k
        let ratios: Vec<f64> = t[20..].iter().map(|r| r.lhs / r.rhs).collect();
        let up = ratios.windows(2).all(|w| w[1] >= w[0]);
        let down = ratios.windows(2).all(|w| w[1] <= w[0]);
        assert!(up || down);
        assert!(stirling_ratio_check(201).is_err());
    }

    fn inputs(beta: f64, phi0: f64, v0: f64) -> RegionInputs {
        RegionInputs { beta, phi0, v0, g_l1: 2.0, g_norm: 2.0, vtilde_gg: beta * v0 * 3.0, epsilon: 0.1, c_tilde: 0.2, dim: 3 }
    }

    #[test]
    fn region_monotone_and_trivial_limit() {
        let p = region(inputs(1.0, 0.0, 0.0)).unwrap();
        assert!((p.margin - 1.0).abs() < 1e-15 && p.verdict == Verdict::Convergent);
        let mut prev = f64::INFINITY;
        for i in 0..30 {
            let m = region(inputs(1.0, 0.5, 0.01 + 0.05 * i as f64)).unwrap().margin;
            assert!(m < prev);
            prev = m;
        }
        let mut prev = f64::INFINITY;
        for i in 0..30 {
            let m = region(inputs(1.0, 0.05 * (i + 1) as f64, 0.3)).unwrap().margin;
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn region_at_zero_condensate_matches_e_criterion() {
        for i in 0..200 {
            let beta = 0.05 * 1.04f64.powi(i);
            let p = region(inputs(beta, 0.0, 0.4)).unwrap();
            let e = e_bound(0.2, beta, 0.4, 2.0, 1.0, 3).unwrap();
            assert_eq!(p.verdict == Verdict::Convergent, e.convergent);
        }
    }

    #[test]
    fn verdict_holds_on_an_interval() {
        let base = inputs(1.0, 0.6, 0.5);
        let iv = convergent_interval(base, 0.5 * 3.0, |_| 0.2, 0.01, 100.0, 400).unwrap().unwrap();
        assert!(iv.0 > 0.01 && iv.1 < 100.0 && iv.0 < iv.1);
        for i in 0..400 {
            let b = 0.01 * 10000f64.powf(i as f64 / 399.0);
            let m = region(RegionInputs { beta: b, vtilde_gg: b * 1.5, ..base }).unwrap().margin;
            assert_eq!(m > 0.0, b > iv.0 && b < iv.1, "beta {b}");
        }
    }

    #[test]
    fn beta0_properties() {
        let b = beta0(0.8, 0.0, 0.3, 3).unwrap();
        let want = (0.8f64.sqrt() * 0.3 / std::f64::consts::LN_2).powf(2.0 / 3.0);
        assert!((b.closed_form - want).abs() < 1e-14);
        assert!((b.bisection - b.closed_form).abs() < 1e-9 * want);
        for s in [1.0 - 1e-6, 1.0 + 1e-6] {
            let m = intro_margin(0.8, 0.0, 0.3, b.bisection * s, 3);
            assert_eq!(m > 0.0, s > 1.0);
        }
        let mut prev = 0.0;
        for i in 0..50 {
            let v = beta0(0.8, 0.04 * i as f64, 0.3, 3).unwrap().bisection;
            assert!(v > prev);
            prev = v;
        }
    }
}
