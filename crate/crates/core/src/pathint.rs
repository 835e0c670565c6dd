//! Brownian-bridge Feynman–Kac estimators for the free, externally driven and
//! Gaussian-averaged kernels.
//!
//! A kernel entry is written as a sum over strata of path duration
//! τ_n = τ₀ + nβ. Each stratum carries the exact weight e^{μτ_n}·G(x−y; τ_n)
//! (periodized heat kernel) times a bridge expectation, so the A = 0 case is
//! reproduced without statistical error.

use crate::error::{domain, KmsError, Result};
use crate::model::{interpolate_periodic, wrap_signed, Cutoff, GridSpec, LatticeField, ModelParams, Potential};
use crate::propagator::heat_kernel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

/// Samples per RNG stream. Streams are keyed by (stratum, block), so the
/// result does not depend on how blocks are spread over threads.
const BLOCK: usize = 256;

/// Default quadrature points per β of path time.
pub const DEFAULT_STEPS_PER_BETA: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BridgePath {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
}

/// Fills `out` (length (n_steps+1)·d) with a bridge from x at 0 to y at t.
fn fill_bridge<R: Rng>(x: &[f64], y: &[f64], t: f64, n_steps: usize, mass: f64, rng: &mut R, out: &mut [f64]) {
    let d = x.len();
    let h = t / n_steps as f64;
    out[..d].copy_from_slice(x);
    for k in 0..n_steps {
        let (done, rest) = out.split_at_mut((k + 1) * d);
        let cur = &done[k * d..];
        let next = &mut rest[..d];
        if k + 1 == n_steps {
            next.copy_from_slice(y);
            break;
        }
        let remaining = t - k as f64 * h;
        let frac = h / remaining;
        let sd = (h * (remaining - h) / (remaining * mass)).sqrt();
        for a in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            next[a] = cur[a] + (y[a] - cur[a]) * frac + sd * z;
        }
    }
}

/// Brownian bridge with diffusion 1/m per axis, pinned at both ends.
pub fn sample_bridge(x: &[f64], y: &[f64], t: f64, n_steps: usize, mass: f64, seed: u64) -> Result<BridgePath> {
    if !(t > 0.0) {
        return domain(format!("bridge duration must be positive, got {t}"));
    }
    if n_steps < 1 {
        return domain("bridge needs at least one step");
    }
    if x.len() != y.len() {
        return Err(KmsError::Shape("bridge endpoints differ in dimension".into()));
    }
    if !(mass > 0.0) {
        return domain("mass must be positive");
    }
    let d = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = vec![0.0; (n_steps + 1) * d];
    fill_bridge(x, y, t, n_steps, mass, &mut rng, &mut flat);
    Ok(BridgePath {
        times: (0..=n_steps).map(|k| t * k as f64 / n_steps as f64).collect(),
        positions: flat.chunks(d).map(|c| c.to_vec()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McOptions {
    /// Number of strata (path durations τ₀, τ₀+β, …).
    pub n_max: usize,
    pub samples: usize,
    pub seed: u64,
    pub steps_per_beta: usize,
}

impl McOptions {
    pub fn new(n_max: usize, samples: usize, seed: u64) -> Self {
        McOptions { n_max, samples, seed, steps_per_beta: DEFAULT_STEPS_PER_BETA }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StratumRow {
    pub tau: f64,
    pub weight: f64,
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub strata: Vec<StratumRow>,
    /// Upper bound on the strata beyond n_max.
    pub tail_bound: f64,
    pub steps_per_beta: usize,
    /// Largest per-sample path weight seen (HS estimator only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_weight: Option<f64>,
}

/// Exact image distribution of the periodized heat kernel along one axis.
struct ImageSampler {
    base: f64,
    length: f64,
    offsets: Vec<i64>,
    cdf: Vec<f64>,
}

impl ImageSampler {
    fn new(disp: f64, tau: f64, mass: f64, length: f64) -> Self {
        let base = wrap_signed(disp, length);
        let reach = ((90.0 * tau / mass).sqrt() / length).ceil() as i64 + 1;
        let offsets: Vec<i64> = (-reach..=reach).collect();
        let mut cdf = Vec::with_capacity(offsets.len());
        let mut acc = 0.0;
        for &w in &offsets {
            let z = base + w as f64 * length;
            acc += (-mass * z * z / (2.0 * tau)).exp();
            cdf.push(acc);
        }
        ImageSampler { base, length, offsets, cdf }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let total = *self.cdf.last().unwrap();
        let r: f64 = rng.random::<f64>() * total;
        let i = self.cdf.partition_point(|&c| c < r).min(self.offsets.len() - 1);
        self.base + self.offsets[i] as f64 * self.length
    }
}

struct Stratum {
    tau: f64,
    weight: f64,
    n_steps: usize,
}

/// Runs every stratum and combines. `functional` gets the flat path
/// (n_steps+1 points) and the step and returns the bridge integrand.
fn run_strata<F>(
    grid: &GridSpec,
    mass: f64,
    x: &[f64],
    y: &[f64],
    strata: &[Stratum],
    opts: &McOptions,
    functional: F,
) -> Result<(Vec<StratumRow>, f64, f64, usize)>
where
    F: Fn(&[f64], usize, f64) -> Result<f64> + Sync,
{
    let d = grid.dim();
    if x.len() != d || y.len() != d {
        return Err(KmsError::Shape(format!("points must have {d} coordinates")));
    }
    let total_w: f64 = strata.iter().map(|s| s.weight).sum();
    let mut rows = Vec::with_capacity(strata.len());
    let (mut mean, mut var, mut count) = (0.0, 0.0, 0usize);
    for (si, st) in strata.iter().enumerate() {
        let share = if total_w > 0.0 { st.weight / total_w } else { 1.0 / strata.len() as f64 };
        let n_samp = ((opts.samples as f64 * share).round() as usize).max(BLOCK);
        let n_blocks = n_samp.div_ceil(BLOCK);
        let samplers: Vec<ImageSampler> =
            (0..d).map(|a| ImageSampler::new(y[a] - x[a], st.tau, mass, grid.box_length[a])).collect();
        let h = st.tau / st.n_steps as f64;
        let partial: Vec<Result<(f64, f64)>> = (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(((si as u64) << 32) | b as u64);
                let mut path = vec![0.0; (st.n_steps + 1) * d];
                let mut end = vec![0.0; d];
                let (mut s1, mut s2) = (0.0, 0.0);
                let here = BLOCK.min(n_samp - b * BLOCK);
                for _ in 0..here {
                    for a in 0..d {
                        end[a] = x[a] + samplers[a].draw(&mut rng);
                    }
                    fill_bridge(x, &end, st.tau, st.n_steps, mass, &mut rng, &mut path);
                    let v = functional(&path, st.n_steps, h)?;
                    s1 += v;
                    s2 += v * v;
                }
                Ok((s1, s2))
            })
            .collect();
        let (mut s1, mut s2) = (0.0, 0.0);
        for p in partial {
            let (a, b) = p?;
            s1 += a;
            s2 += b;
        }
        let n = n_samp as f64;
        let m = s1 / n;
        let sample_var = if n_samp > 1 { ((s2 - n * m * m) / (n - 1.0)).max(0.0) } else { 0.0 };
        let se = (sample_var / n).sqrt();
        mean += st.weight * m;
        var += st.weight * st.weight * se * se;
        count += n_samp;
        rows.push(StratumRow { tau: st.tau, weight: st.weight, mean: m, std_error: se, n_samples: n_samp, step: h });
    }
    Ok((rows, mean, var.sqrt(), count))
}

fn stratum_list(grid: &GridSpec, mass: f64, mu: f64, x: &[f64], y: &[f64], tau0: f64, opts: &McOptions) -> Vec<Stratum> {
    let beta = grid.beta();
    let disp: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    (0..opts.n_max)
        .map(|n| {
            let tau = tau0 + n as f64 * beta;
            let n_steps = ((opts.steps_per_beta as f64 * tau / beta).ceil() as usize).max(1);
            Stratum { tau, weight: (mu * tau).exp() * heat_kernel(&disp, tau, mass, &grid.box_length), n_steps }
        })
        .collect()
}

/// Σ over strata beyond n_max of e^{rate·τ}·G(0; τ), with rate = μ + (sup of
/// the log path weight per unit time).
fn tail_sum(grid: &GridSpec, mass: f64, rate: f64, tau0: f64, n_max: usize) -> f64 {
    let beta = grid.beta();
    if rate >= 0.0 {
        return f64::INFINITY;
    }
    let origin = vec![0.0; grid.dim()];
    let mut acc = 0.0;
    for n in n_max.. {
        let tau = tau0 + n as f64 * beta;
        let term = (rate * tau).exp() * heat_kernel(&origin, tau, mass, &grid.box_length);
        acc += term;
        if term < 1e-18 * acc.max(1e-300) || n > n_max + 100_000 {
            // the heat kernel is bounded by its value here, so the rest is geometric
            let q = (rate * beta).exp();
            acc += term * q / (1.0 - q);
            break;
        }
    }
    acc
}

fn check_mc(params: &ModelParams, grid: &GridSpec, opts: &McOptions) -> Result<()> {
    if !(params.mu_eff() < 0.0) {
        return domain("Feynman–Kac strata need μ_eff < 0");
    }
    if opts.n_max < 1 || opts.samples < 1 || opts.steps_per_beta < 1 {
        return domain("n_max, samples and steps_per_beta must be positive");
    }
    if grid.beta() != params.beta {
        return Err(KmsError::Shape("grid β differs from model β".into()));
    }
    Ok(())
}

/// A at continuous time (mod β) and position: linear in time between
/// slices, multilinear in space.
fn field_at(grid: &GridSpec, a: &LatticeField, t: f64, pos: &[f64]) -> f64 {
    let m = grid.n_time;
    let s = (t / grid.dtau()).rem_euclid(m as f64);
    let j = (s.floor() as usize) % m;
    let th = s - s.floor();
    let v0 = interpolate_periodic(grid, a.slice(j), pos);
    if th == 0.0 {
        return v0;
    }
    (1.0 - th) * v0 + th * interpolate_periodic(grid, a.slice((j + 1) % m), pos)
}

fn trapezoid_field(grid: &GridSpec, a: &LatticeField, start: f64, path: &[f64], n_steps: usize, h: f64) -> f64 {
    let d = grid.dim();
    let mut acc = 0.0;
    for k in 0..=n_steps {
        let w = if k == 0 || k == n_steps { 0.5 } else { 1.0 };
        acc += w * field_at(grid, a, start + k as f64 * h, &path[k * d..(k + 1) * d]);
    }
    acc * h
}

/// Stratified estimator of a kernel entry with path start time `start`,
/// shortest duration `tau0` and path functional e^{-∫A}.
fn external_estimate(
    x: &[f64],
    y: &[f64],
    start: f64,
    tau0: f64,
    a: &LatticeField,
    params: &ModelParams,
    grid: &GridSpec,
    opts: &McOptions,
) -> Result<McEstimate> {
    check_mc(params, grid, opts)?;
    if a.n_sites() != grid.total_sites() || a.n_time() != grid.n_time {
        return Err(KmsError::Shape("field does not match grid".into()));
    }
    let mu = params.mu_eff();
    let strata = stratum_list(grid, params.mass, mu, x, y, tau0, opts);
    let (rows, mean, se, count) = run_strata(grid, params.mass, x, y, &strata, opts, |path, n, h| {
        Ok((-trapezoid_field(grid, a, start, path, n, h)).exp())
    })?;
    let a_min = a.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let tail = tail_sum(grid, params.mass, mu - a_min, tau0, opts.n_max);
    Ok(McEstimate {
        mean,
        std_error: se,
        n_samples: count,
        seed: opts.seed,
        strata: rows,
        tail_bound: tail,
        steps_per_beta: opts.steps_per_beta,
        max_weight: None,
    })
}

/// Ω(x, y) without the contact term: windings 1..=n_max, each weighted by
/// E_bridge[exp(−∫₀^{nβ} A)].
pub fn mc_two_point_external(
    x: &[f64],
    y: &[f64],
    a: &LatticeField,
    params: &ModelParams,
    grid: &GridSpec,
    opts: &McOptions,
) -> Result<McEstimate> {
    external_estimate(x, y, 0.0, grid.beta(), a, params, grid, opts)
}

/// Kernel entry Δ^{βA}(x, u_j; y, u_k): the path leaves x at u_j and reaches
/// y after (u_k − u_j) mod β (β at equal slices), plus whole windings.
pub fn mc_interacting_propagator(
    x: &[f64],
    j: usize,
    y: &[f64],
    k: usize,
    a: &LatticeField,
    params: &ModelParams,
    grid: &GridSpec,
    opts: &McOptions,
) -> Result<McEstimate> {
    let m = grid.n_time;
    if j >= m || k >= m {
        return Err(KmsError::Shape(format!("slice index out of range 0..{m}")));
    }
    let r = (k + m - j) % m;
    let tau0 = if r == 0 { grid.beta() } else { r as f64 * grid.dtau() };
    external_estimate(x, y, grid.time(j), tau0, a, params, grid, opts)
}

/// Gaussian-averaged two-point function: windings 1..=n_max with path weight
/// exp(−½ Σ_{i,j} ∫₀^β g(ω_i)g(ω_j) v(ω_j − ω_i) ds), ω_i(s) = ω(s + iβ).
/// Each weight must lie in (0, 1]; a violation is an error.
pub fn mc_two_point_hs(
    x: &[f64],
    y: &[f64],
    potential: &Potential,
    cutoff: &Cutoff,
    params: &ModelParams,
    grid: &GridSpec,
    opts: &McOptions,
) -> Result<McEstimate> {
    check_mc(params, grid, opts)?;
    potential.validate(grid)?;
    if cutoff.g.len() != grid.total_sites() {
        return Err(KmsError::Shape("cutoff does not match grid".into()));
    }
    let d = grid.dim();
    let per_beta = opts.steps_per_beta;
    let coupling = params.coupling;
    let strata = stratum_list(grid, params.mass, params.mu_eff(), x, y, grid.beta(), opts);
    let max_seen = std::sync::Mutex::new(0.0f64);
    let (rows, mean, se, count) = run_strata(grid, params.mass, x, y, &strata, opts, |path, n, h| {
        let windings = n / per_beta;
        let mut gvals = vec![0.0; n];
        for (p, gv) in gvals.iter_mut().enumerate() {
            *gv = interpolate_periodic(grid, &cutoff.g, &path[p * d..(p + 1) * d]);
        }
        let mut disp = vec![0.0; d];
        let mut q = 0.0;
        // left-point rule on [0, β): every residue class has `windings` points
        for r in 0..per_beta {
            for i in 0..windings {
                let pi = r + i * per_beta;
                for jj in 0..windings {
                    let pj = r + jj * per_beta;
                    for a in 0..d {
                        disp[a] = path[pj * d + a] - path[pi * d + a];
                    }
                    q += gvals[pi] * gvals[pj] * potential.eval(grid, &disp);
                }
            }
        }
        let w = (-0.5 * coupling * h * q).exp();
        if !(w >= 0.0) || w > 1.0 + 1e-12 {
            return Err(KmsError::Invariant(format!("HS path weight {w} outside (0, 1]")));
        }
        let mut g = max_seen.lock().unwrap();
        *g = g.max(w);
        Ok(w)
    })?;
    let tail = tail_sum(grid, params.mass, params.mu_eff(), grid.beta(), opts.n_max);
    Ok(McEstimate {
        mean,
        std_error: se,
        n_samples: count,
        seed: opts.seed,
        strata: rows,
        tail_bound: tail,
        steps_per_beta: per_beta,
        max_weight: Some(max_seen.into_inner().unwrap()),
    })
}

/// Free value of the same strata (the exact A = 0 estimate).
pub fn free_strata_sum(x: &[f64], y: &[f64], params: &ModelParams, grid: &GridSpec, n_max: usize) -> f64 {
    let disp: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    (1..=n_max)
        .map(|n| {
            let tau = n as f64 * grid.beta();
            (params.mu_eff() * tau).exp() * heat_kernel(&disp, tau, params.mass, &grid.box_length)
        })
        .sum()
}
