//! Polylogarithm and Riemann zeta on the real line.
//!
//! `polylog` sums the defining series directly when it converges fast and
//! switches to the expansion around y = 1,
//!   Li_s(e^{-z}) = Γ(1-s) z^{s-1} + Σ_k ζ(s-k) (-z)^k / k!,
//! when y is close to one. ζ itself comes from Euler–Maclaurin.

use crate::error::{domain, Result};
use crate::scalar::Real;
use statrs::function::gamma::gamma;

// B_2, B_4, ..., B_16
const BERNOULLI_EVEN: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// Riemann ζ(s) for real s ≠ 1.
pub fn zeta(s: f64) -> Result<f64> {
    if !s.is_finite() || s == 1.0 {
        return domain(format!("zeta pole or non-finite argument s={s}"));
    }
    if s == 0.0 {
        return Ok(-0.5);
    }
    if s < -4.0 {
        // functional equation ζ(s) = 2 (2π)^{s-1} sin(πs/2) Γ(1-s) ζ(1-s)
        let w = 1.0 - s;
        let two_pi = 2.0 * std::f64::consts::PI;
        let sin = (std::f64::consts::FRAC_PI_2 * s).sin();
        return Ok(2.0 * two_pi.powf(s - 1.0) * sin * gamma(w) * zeta_em(w));
    }
    Ok(zeta_em(s))
}

fn zeta_em(s: f64) -> f64 {
    let n = 24usize;
    let nf = n as f64;
    let mut head = 0.0;
    for k in 1..n {
        head += (k as f64).powf(-s);
    }
    let mut tail = nf.powf(1.0 - s) / (s - 1.0) + 0.5 * nf.powf(-s);
    // rising factorial s (s+1) ... (s+2k-2), times N^{-s-2k+1}/(2k)!
    let mut rising = s;
    let mut fact = 2.0;
    let mut npow = nf.powf(-s - 1.0);
    for (k, b) in BERNOULLI_EVEN.iter().enumerate() {
        if k > 0 {
            let j = 2.0 * k as f64;
            rising *= (s + j - 1.0) * (s + j);
            fact *= (j + 1.0) * (j + 2.0);
            npow /= nf * nf;
        }
        tail += b / fact * rising * npow;
    }
    head + tail
}

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

/// Expansion of Li_s(e^{-z}) about z = 0, valid for 0 < z < 2π.
fn polylog_near_one(s: f64, z: f64) -> f64 {
    let is_int = s.fract() == 0.0;
    let mut acc = 0.0;
    if !is_int {
        acc += gamma(1.0 - s) * z.powf(s - 1.0);
    }
    let mut zk_over_kfact = 1.0; // (-z)^k / k!
    for k in 0..80usize {
        if k > 0 {
            zk_over_kfact *= -z / k as f64;
        }
        let arg = s - k as f64;
        let term = if is_int && arg == 1.0 {
            zk_over_kfact * (harmonic(k) - z.ln())
        } else {
            zeta(arg).expect("non-pole") * zk_over_kfact
        };
        acc += term;
        // |ζ(s-k)|/k! ~ (2π)^{-k}; zeros of ζ make single terms useless as a stop test
        if k > 4 && (z / (2.0 * std::f64::consts::PI)).powi(k as i32) < 1e-18 {
            break;
        }
    }
    acc
}

/// Li_s(y) = Σ_{n≥1} y^n / n^s for s > 1 and 0 ≤ y ≤ 1.
pub fn polylog<T: Real>(s: T, y: T) -> Result<T> {
    if !(s > T::one()) {
        return domain(format!("polylog order must exceed 1, got s={:?}", s));
    }
    polylog_general(s, y)
}

/// Li_s(y) for any s > 0 with 0 ≤ y < 1, and for s > 1 also at y = 1.
/// Low dimensions need the orders 1/2 and 1, which is why this is exposed.
pub fn polylog_general<T: Real>(s: T, y: T) -> Result<T> {
    if !(s > T::zero()) || !s.is_finite() {
        return domain(format!("polylog order must be positive, got s={:?}", s));
    }
    if !(y >= T::zero()) || y > T::one() {
        return domain(format!("polylog argument outside [0,1]: y={:?}", y));
    }
    if y == T::zero() {
        return Ok(T::zero());
    }
    let sf = s.as_f64();
    if y == T::one() {
        if sf <= 1.0 {
            return domain(format!("Li_s(1) diverges for s={sf}"));
        }
        return Ok(T::lit(zeta(sf)?));
    }
    if sf == 1.0 {
        return Ok(-(-y).ln_1p());
    }
    if y <= T::lit(0.75) {
        // direct summation; remaining tail ≤ term·y/(1-y)
        let eps = T::epsilon();
        let mut sum = T::zero();
        let mut yn = T::one();
        let mut n = 1usize;
        loop {
            yn = yn * y;
            let term = yn / T::from_usize(n).unwrap().powf(s);
            sum = sum + term;
            if term * y / (T::one() - y) <= eps * sum || n > 100_000 {
                break;
            }
            n += 1;
        }
        return Ok(sum);
    }
    let z = -y.as_f64().ln();
    Ok(T::lit(polylog_near_one(sf, z)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(s: f64, y: f64, n: usize) -> f64 {
        (1..=n).map(|k| y.powi(k as i32) / (k as f64).powf(s)).sum()
    }

    #[test]
    fn empty_sum_at_zero() {
        assert_eq!(polylog(1.5f64, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn zeta_three_halves() {
        // brute partial sum with the integral tail N^{1-s}/(s-1) - N^{-s}/2
        let n = 200_000usize;
        let s = 1.5;
        let nf = n as f64;
        let head: f64 = (1..=n).map(|k| (k as f64).powf(-s)).sum();
        let oracle = head + nf.powf(1.0 - s) / (s - 1.0) - 0.5 * nf.powf(-s);
        let z = polylog(1.5f64, 1.0).unwrap();
        assert!((z - oracle).abs() < 1e-10 * oracle, "{z} vs {oracle}");
        assert!((z - 2.612375).abs() < 1e-6);
    }

    #[test]
    fn order_one_is_log() {
        let v = polylog_general(1.0f64, 0.5).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-14);
        // slightly above s = 1 the series code approaches the closed form
        let near = polylog(1.0f64 + 1e-7, 0.5).unwrap();
        assert!((near - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn branch_switch_is_continuous() {
        for &s in &[0.5, 1.5, 2.0, 2.5, 3.0] {
            let direct = polylog_general(s, 0.75f64).unwrap();
            let series = polylog_near_one(s, -(0.75f64).ln());
            assert!((direct - series).abs() < 1e-12 * direct, "s={s}: {direct} {series}");
            for &y in &[0.8, 0.9, 0.99] {
                let got = polylog_general(s, y).unwrap();
                let want = brute(s, y, 20_000);
                assert!((got - want).abs() < 1e-10 * want.abs(), "s={s} y={y}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn zeta_known_values() {
        assert!((zeta(2.0).unwrap() - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-13);
        assert!((zeta(0.5).unwrap() + 1.460_354_508_809_586_8).abs() < 1e-12);
        assert!((zeta(-1.0).unwrap() + 1.0 / 12.0).abs() < 1e-13);
        assert!(zeta(-6.0).unwrap().abs() < 1e-14);
        assert!(zeta(1.0).is_err());
    }

    #[test]
    fn domain_errors() {
        assert!(polylog(1.0f64, 0.5).is_err());
        assert!(polylog(1.5f64, 1.2).is_err());
        assert!(polylog_general(0.5f64, 1.0).is_err());
    }

    #[test]
    fn single_precision_agrees() {
        let a = polylog(1.5f32, 0.3).unwrap() as f64;
        let b = polylog(1.5f64, 0.3).unwrap();
        assert!((a - b).abs() < 1e-6);
    }
}
