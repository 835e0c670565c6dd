//! Gaussian (Hubbard–Stratonovich) layer: the form ṽ, the averaging map on
//! exponentials and polynomials of A, and Monte Carlo for Z and S.
//!
//! Convention: ⟨A⟩_b = Σ a^dΔu A(x,u) b(x,u). The exact maps use the
//! e^{-½ṽ} sign. Sampling uses real A ~ N(0, V) with
//! V[(x,u),(x',u')] = λ v(x−x') δ_{uu'}/Δu, so E[e^{-⟨A⟩_b}] = e^{+½ṽ(b,b)};
//! coupling coefficients reported here undo that flip.

use crate::cumulants::{connected_from_mixed, perfect_matchings, permutations};
use crate::dyson::{one_point, resolvent_kernel, truncated_two_point, Quadrature};
use crate::entropy::{s0_logdet, t0_free_expectation, t1_condensate, EntropyContext};
use crate::error::{KmsError, Result};
use crate::model::{FieldKind, GridSpec, LatticeField, Potential};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

const BLOCK: usize = 256;
pub const MAX_PAIRING_DEGREE: usize = 12;
pub const MAX_REJECTION: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmearingTag {
    Point { site: usize, slice: usize },
    TimeIntegrated,
    Path,
    Cutoff,
    General,
}

/// A test function b on sites × slices.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Smearing {
    pub b: LatticeField,
    pub tag: SmearingTag,
}

impl Smearing {
    pub fn new(b: LatticeField) -> Self {
        Smearing { b, tag: SmearingTag::General }
    }

    /// δ_{x,s}: ⟨A⟩_b = A(x, s).
    pub fn point(grid: &GridSpec, site: usize, slice: usize) -> Result<Self> {
        let w = 1.0 / (grid.cell_volume() * grid.dtau());
        let b = LatticeField::from_rows(grid, &[(site, slice, w)], FieldKind::Smearing)?;
        Ok(Smearing { b, tag: SmearingTag::Point { site, slice } })
    }

    /// f(x) on every slice, so ⟨A⟩_b = Σ_x a^d f(x) ∫ A(x,u) du.
    pub fn time_integrated(grid: &GridSpec, f: &[f64]) -> Result<Self> {
        if f.len() != grid.total_sites() {
            return Err(KmsError::Shape("smearing profile must live on the sites".into()));
        }
        let n = f.len();
        let b = LatticeField::from_fn(grid, FieldKind::Smearing, |x, _| f[x % n])?;
        Ok(Smearing { b, tag: SmearingTag::TimeIntegrated })
    }

    /// Spatial Kronecker point δ_x/a^d held for all times.
    pub fn site_line(grid: &GridSpec, site: usize) -> Result<Self> {
        let mut f = vec![0.0; grid.total_sites()];
        f[site] = 1.0 / grid.cell_volume();
        Self::time_integrated(grid, &f)
    }

    pub fn cutoff(grid: &GridSpec, g: &[f64]) -> Result<Self> {
        let mut s = Self::time_integrated(grid, g)?;
        s.tag = SmearingTag::Cutoff;
        Ok(s)
    }

    pub fn pairing(&self, a: &LatticeField, grid: &GridSpec) -> f64 {
        let w = grid.cell_volume() * grid.dtau();
        self.b.values().iter().zip(a.values()).map(|(b, a)| b * a).sum::<f64>() * w
    }
}

/// Covariance of the auxiliary field: block diagonal in time with the same
/// N×N block λ v(x−x')/Δu on every slice.
#[derive(Clone, Debug)]
pub struct GaussianCovariance {
    pub grid: GridSpec,
    pub coupling: f64,
    /// v(x_i) at every site (unscaled by the coupling).
    pub v_sites: Vec<f64>,
    pub slice_cov: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl GaussianCovariance {
    pub fn new(grid: &GridSpec, potential: &Potential, coupling: f64) -> Result<Self> {
        potential.validate(grid)?;
        if !(coupling >= 0.0) {
            return Err(KmsError::Invariant("coupling ≥ 0".into()));
        }
        let v_sites = potential.on_grid(grid)?;
        let n = grid.total_sites();
        let du = grid.dtau();
        let slice_cov = DMatrix::from_fn(n, n, |x, y| coupling * v_sites[grid.diff_site(x, y)] / du);
        let factor = match slice_cov.clone().cholesky() {
            Some(ch) => ch.l(),
            None => {
                // semidefinite blocks (flat or band-limited v): symmetric square root
                let eig = slice_cov.clone().symmetric_eigen();
                let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
                if eig.eigenvalues.iter().any(|&l| l < -1e-10 * top) {
                    return Err(KmsError::Invariant("covariance is not positive semidefinite".into()));
                }
                let sq = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()));
                &eig.eigenvectors * DMatrix::from_diagonal(&sq)
            }
        };
        Ok(GaussianCovariance { grid: grid.clone(), coupling, v_sites, slice_cov, factor })
    }

    /// V between space-time indices (slice·N + site).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let n = self.grid.total_sites();
        if i / n != j / n {
            return 0.0;
        }
        self.slice_cov[(i % n, j % n)]
    }

    fn fill_sample<R: rand::Rng>(&self, rng: &mut R, z: &mut DVector<f64>, out: &mut [f64]) {
        let n = self.grid.total_sites();
        for chunk in out.chunks_mut(n) {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let a = &self.factor * &*z;
            chunk.copy_from_slice(a.as_slice());
        }
    }

    pub fn sample(&self, seed: u64) -> LatticeField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = DVector::zeros(self.grid.total_sites());
        let mut vals = vec![0.0; self.grid.spacetime_len()];
        self.fill_sample(&mut rng, &mut z, &mut vals);
        LatticeField::new(&self.grid, vals, FieldKind::Potential).expect("sample matches grid")
    }

    /// ṽ(b₁, b₂) = Σ_u Δu Σ_{x,x'} a^{2d} λv(x−x') b₁(x,u) b₂(x',u).
    pub fn vtilde(&self, b1: &Smearing, b2: &Smearing) -> Result<f64> {
        let grid = &self.grid;
        let l = grid.spacetime_len();
        if b1.b.values().len() != l || b2.b.values().len() != l {
            return Err(KmsError::Shape("smearings must live on the covariance grid".into()));
        }
        let ad = grid.cell_volume();
        let du = grid.dtau();
        let mut acc = 0.0;
        for j in 0..grid.n_time {
            let s1 = DVector::from_column_slice(b1.b.slice(j));
            let s2 = DVector::from_column_slice(b2.b.slice(j));
            if s1.iter().all(|v| *v == 0.0) || s2.iter().all(|v| *v == 0.0) {
                continue;
            }
            // slice_cov carries 1/Δu
            acc += s1.dot(&(&self.slice_cov * s2)) * du * du;
        }
        Ok(acc * ad * ad)
    }

    /// η_{ij} = ṽ(b_i, b_j).
    pub fn gram(&self, bs: &[Smearing]) -> Result<DMatrix<f64>> {
        let k = bs.len();
        let mut eta = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v = self.vtilde(&bs[i], &bs[j])?;
                eta[(i, j)] = v;
                eta[(j, i)] = v;
            }
        }
        Ok(eta)
    }
}

/// e^Γ Π e^{⟨A⟩_{b_i}} at A = 0, i.e. e^{-½ Σ_{i,j} ṽ(b_i, b_j)}.
pub fn gamma_exponentials(cov: &GaussianCovariance, bs: &[Smearing]) -> Result<f64> {
    let eta = cov.gram(bs)?;
    Ok((-0.5 * eta.sum()).exp())
}

/// e^Γ Π ⟨A⟩_{b_i} at A = 0: sum over perfect pairings of Π ṽ.
pub fn gamma_polynomial(cov: &GaussianCovariance, factors: &[Smearing]) -> Result<f64> {
    let k = factors.len();
    if k > MAX_PAIRING_DEGREE {
        return Err(KmsError::Limit(format!("pairing sums need degree ≤ {MAX_PAIRING_DEGREE}, got {k}")));
    }
    if k % 2 == 1 {
        return Ok(0.0);
    }
    let eta = cov.gram(factors)?;
    Ok(perfect_matchings(k).iter().map(|m| m.iter().map(|&(i, j)| eta[(i, j)]).product::<f64>()).sum())
}

/// Trace powers t_n = Tr (diag(a)·G)^n for n = 1..4.
fn trace_powers(a: &[f64], gop: &DMatrix<f64>, y: &mut DMatrix<f64>, y2: &mut DMatrix<f64>) -> [f64; 4] {
    let l = a.len();
    y.copy_from(gop);
    for (i, mut row) in y.row_iter_mut().enumerate() {
        row *= a[i];
    }
    y.mul_to(y, y2);
    let t1 = (0..l).map(|i| y[(i, i)]).sum();
    let t2 = y2.trace();
    let mut t3 = 0.0;
    let mut t4 = 0.0;
    for j in 0..l {
        for i in 0..l {
            t3 += y2[(i, j)] * y[(j, i)];
            t4 += y2[(i, j)] * y2[(j, i)];
        }
    }
    [t1, t2, t3, t4]
}

/// Taylor coefficients c₂ and c₄ of exp(−log det(1 + sX)) in s.
fn even_taylor(t: [f64; 4]) -> (f64, f64) {
    let w1 = -t[0];
    let w2 = t[1] / 2.0;
    let w3 = -t[2] / 3.0;
    let w4 = t[3] / 4.0;
    let c2 = w2 + w1 * w1 / 2.0;
    let c4 = w4 + w1 * w3 + w2 * w2 / 2.0 + w1 * w1 * w2 / 2.0 + w1.powi(4) / 24.0;
    (c2, c4)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingCoefficients {
    pub order1: f64,
    pub order1_se: f64,
    pub order2: f64,
    pub order2_se: f64,
    pub n_samples: usize,
    pub seed: u64,
}

fn block_rng(seed: u64, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    rng
}

/// First two coefficients of Z(λ) = Σ λ^k z_k at φ₀ = 0, estimated as
/// Gaussian averages of the s², s⁴ Taylor coefficients of e^{W_{sA}}.
/// `cov` is taken at unit coupling.
pub fn coupling_coefficients(ctx: &EntropyContext, cov: &GaussianCovariance, samples: usize, seed: u64) -> Result<CouplingCoefficients> {
    if ctx.phi0 != 0.0 {
        return Err(KmsError::Domain("coupling coefficients are implemented for φ₀ = 0".into()));
    }
    if samples < 2 {
        return Err(KmsError::Domain("need at least two samples".into()));
    }
    let grid = ctx.grid();
    let l = grid.spacetime_len();
    let n = grid.total_sites();
    let g = &ctx.cutoff.g;
    let unit = if cov.coupling > 0.0 { 1.0 / cov.coupling.sqrt() } else { 0.0 };
    let n_blocks = samples.div_ceil(BLOCK);
    let sums: Vec<[f64; 4]> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b);
            let mut z = DVector::zeros(n);
            let mut a = vec![0.0; l];
            let mut y = DMatrix::zeros(l, l);
            let mut y2 = DMatrix::zeros(l, l);
            let mut acc = [0.0; 4];
            for _ in 0..BLOCK.min(samples - b * BLOCK) {
                cov.fill_sample(&mut rng, &mut z, &mut a);
                for (i, v) in a.iter_mut().enumerate() {
                    *v *= unit * g[i % n];
                }
                let (c2, c4) = even_taylor(trace_powers(&a, &ctx.gop, &mut y, &mut y2));
                acc[0] += c2;
                acc[1] += c2 * c2;
                acc[2] += c4;
                acc[3] += c4 * c4;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for s in sums {
        for k in 0..4 {
            tot[k] += s[k];
        }
    }
    let nf = samples as f64;
    let stats = |s1: f64, s2: f64| {
        let m = s1 / nf;
        (m, (((s2 - nf * m * m) / (nf - 1.0)).max(0.0) / nf).sqrt())
    };
    let (m2, e2) = stats(tot[0], tot[1]);
    let (m4, e4) = stats(tot[2], tot[3]);
    Ok(CouplingCoefficients { order1: -m2, order1_se: e2, order2: m4, order2_se: e4, n_samples: samples, seed })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionEstimate {
    pub z: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub n_rejected: usize,
    pub rejection_fraction: f64,
    pub seed: u64,
    pub mean_w: f64,
    pub max_ratio: f64,
}

/// The per-sample Dyson hypothesis: max(β‖gA‖∞, ‖gA‖∞‖Δ^β‖) < 1.
pub fn sample_ratio(ctx: &EntropyContext, a: &LatticeField) -> f64 {
    let sup = ctx.dressed(a).sup_norm();
    (ctx.grid().beta() * sup).max(sup * ctx.free.operator_norm())
}

fn w_primary(ctx: &EntropyContext, a: &LatticeField) -> Result<f64> {
    Ok(t0_free_expectation(ctx, a)? + t1_condensate(ctx, a)?.primary + s0_logdet(ctx, a)?)
}

/// Z ≈ E_A[e^{W_A}], A ~ N(0, V); samples violating the Dyson hypothesis are
/// rejected and counted.
pub fn partition_mc(ctx: &EntropyContext, cov: &GaussianCovariance, samples: usize, seed: u64) -> Result<PartitionEstimate> {
    if samples < 2 {
        return Err(KmsError::Domain("need at least two samples".into()));
    }
    if !ctx.grid().same_shape(&cov.grid) {
        return Err(KmsError::Shape("covariance and entropy grids differ".into()));
    }
    let n_blocks = samples.div_ceil(BLOCK);
    let parts: Vec<Result<(f64, f64, f64, usize, f64)>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b);
            let mut z = DVector::zeros(ctx.grid().total_sites());
            let mut vals = vec![0.0; ctx.grid().spacetime_len()];
            let (mut s1, mut s2, mut sw, mut rej, mut worst) = (0.0, 0.0, 0.0, 0usize, 0.0f64);
            for _ in 0..BLOCK.min(samples - b * BLOCK) {
                cov.fill_sample(&mut rng, &mut z, &mut vals);
                let a = LatticeField::new(ctx.grid(), vals.clone(), FieldKind::Potential)?;
                let r = sample_ratio(ctx, &a);
                worst = worst.max(r);
                if r >= 1.0 {
                    rej += 1;
                    continue;
                }
                let w = w_primary(ctx, &a)?;
                let e = w.exp();
                s1 += e;
                s2 += e * e;
                sw += w;
            }
            Ok((s1, s2, sw, rej, worst))
        })
        .collect();
    let (mut s1, mut s2, mut sw, mut rej, mut worst) = (0.0, 0.0, 0.0, 0usize, 0.0f64);
    for p in parts {
        let (a, b, c, r, w) = p?;
        s1 += a;
        s2 += b;
        sw += c;
        rej += r;
        worst = worst.max(w);
    }
    let frac = rej as f64 / samples as f64;
    if frac > MAX_REJECTION {
        return Err(KmsError::Guard(format!(
            "{:.1}% of samples violate the Dyson hypothesis (max ratio {worst:.3})",
            100.0 * frac
        )));
    }
    let acc = samples - rej;
    let nf = acc as f64;
    let mean = s1 / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(PartitionEstimate {
        z: mean,
        std_error: (var / nf).sqrt(),
        n_samples: acc,
        n_rejected: rej,
        rejection_fraction: frac,
        seed,
        mean_w: sw / nf,
        max_ratio: worst,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuarticSeries {
    /// z_0, z_1, … of ω^β(U(iβ)) = Σ λ^k z_k.
    pub coefficients: Vec<f64>,
    /// Connected part of z_2 (z_2 − z_1²/2), present for order 2.
    pub connected: Option<f64>,
}

pub const QUARTIC_MAX_SITES: usize = 8;
pub const QUARTIC_MAX_SLICES: usize = 8;

fn permanent(m: &[[f64; 4]; 4], perms: &[Vec<usize>]) -> f64 {
    perms.iter().map(|p| m[0][p[0]] * m[1][p[1]] * m[2][p[2]] * m[3][p[3]]).sum()
}

/// Coupling expansion of the quartic theory with density–density vertices
/// V_u = ½ Σ a^{2d} g g v Ψ*Ψ*ΨΨ on each slice, every contraction taken with
/// the θ(0) = 0 kernel. Uses unit coupling.
pub fn quartic_series(ctx: &EntropyContext, potential: &Potential, order: usize) -> Result<QuarticSeries> {
    let grid = ctx.grid();
    let n = grid.total_sites();
    let m = grid.n_time;
    if order > 2 {
        return Err(KmsError::Limit(format!("quartic series is implemented to order 2, got {order}")));
    }
    if n > QUARTIC_MAX_SITES || m > QUARTIC_MAX_SLICES {
        return Err(KmsError::Limit(format!(
            "quartic series needs ≤ {QUARTIC_MAX_SITES} sites and ≤ {QUARTIC_MAX_SLICES} slices"
        )));
    }
    let cov = GaussianCovariance::new(grid, potential, 1.0)?;
    let g = &ctx.cutoff.g;
    let gop = &ctx.gop;
    // W(x,y) = g g v/Δu: the vertex weight in operator units
    let w = DMatrix::from_fn(n, n, |x, y| g[x] * g[y] * cov.slice_cov[(x, y)]);
    let mut coeffs = vec![1.0];
    if order == 0 {
        return Ok(QuarticSeries { coefficients: coeffs, connected: None });
    }
    let st = |x: usize, j: usize| j * n + x;
    let m1: Vec<f64> = (0..m)
        .map(|j| {
            let mut acc = 0.0;
            for x in 0..n {
                for y in 0..n {
                    let (p, q) = (st(x, j), st(y, j));
                    acc += w[(x, y)] * (gop[(p, p)] * gop[(q, q)] + gop[(p, q)] * gop[(q, p)]);
                }
            }
            0.5 * acc
        })
        .collect();
    let z1 = -m1.iter().sum::<f64>();
    coeffs.push(z1);
    if order == 1 {
        return Ok(QuarticSeries { coefficients: coeffs, connected: None });
    }
    let perms = permutations(4);
    let mut z2 = 0.0;
    let mut conn = 0.0;
    for j in 0..m {
        for k in 0..m {
            let mut m2 = 0.0;
            for x in 0..n {
                for y in 0..n {
                    for xp in 0..n {
                        for yp in 0..n {
                            let ww = w[(x, y)] * w[(xp, yp)];
                            if ww == 0.0 {
                                continue;
                            }
                            let pts = [st(x, j), st(y, j), st(xp, k), st(yp, k)];
                            let mut mat = [[0.0; 4]; 4];
                            for (r, &pr) in pts.iter().enumerate() {
                                for (c, &pc) in pts.iter().enumerate() {
                                    mat[r][c] = gop[(pr, pc)];
                                }
                            }
                            m2 += ww * permanent(&mat, &perms);
                        }
                    }
                }
            }
            m2 *= 0.25;
            z2 += 0.5 * m2;
            let mixed = |subset: &[usize]| -> Result<f64> {
                Ok(match subset {
                    [0] => m1[j],
                    [1] => m1[k],
                    _ => m2,
                })
            };
            conn += 0.5 * connected_from_mixed(2, mixed)?;
        }
    }
    coeffs.push(z2);
    Ok(QuarticSeries { coefficients: coeffs, connected: Some(conn) })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoPointEstimate {
    pub value: f64,
    /// Jackknife error of the ratio.
    pub std_error: f64,
    pub denominator: f64,
    pub denominator_se: f64,
    pub n_samples: usize,
    pub n_rejected: usize,
    pub seed: u64,
}

/// ⟨f, S h⟩ = E_A[(⟨f,Ω h⟩ + ω^{βA}(Ψ(f)) ω^{βA}(Ψ*(h))) e^{W_A}] / E_A[e^{W_A}],
/// with the same A samples in numerator and denominator.
pub fn interacting_two_point_mc(
    ctx: &EntropyContext,
    cov: &GaussianCovariance,
    f: &[f64],
    h: &[f64],
    samples: usize,
    seed: u64,
) -> Result<TwoPointEstimate> {
    let grid = ctx.grid().clone();
    let n = grid.total_sites();
    if f.len() != n || h.len() != n {
        return Err(KmsError::Shape("f and h must live on the sites".into()));
    }
    if samples < 2 {
        return Err(KmsError::Domain("need at least two samples".into()));
    }
    let ad = grid.cell_volume();
    let fv = DVector::from_column_slice(f);
    let hv = DVector::from_column_slice(h);
    let n_blocks = samples.div_ceil(BLOCK);
    let parts: Vec<Result<(Vec<(f64, f64)>, usize)>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b);
            let mut z = DVector::zeros(n);
            let mut vals = vec![0.0; grid.spacetime_len()];
            let mut out = Vec::new();
            let mut rej = 0;
            for _ in 0..BLOCK.min(samples - b * BLOCK) {
                cov.fill_sample(&mut rng, &mut z, &mut vals);
                let a = LatticeField::new(&grid, vals.clone(), FieldKind::Potential)?;
                if sample_ratio(ctx, &a) >= 1.0 {
                    rej += 1;
                    continue;
                }
                let e = w_primary(ctx, &a)?.exp();
                let ga = ctx.dressed(&a);
                let k = resolvent_kernel(&ctx.free, &ga, Quadrature::Rectangle)?;
                let omega = truncated_two_point(&k);
                let mut val = ad * ad * fv.dot(&(&omega * &hv));
                if ctx.phi0 != 0.0 {
                    let pf = one_point(f, &k, &ctx.free, &ctx.cutoff.chi, ctx.phi0, 1e-6)?;
                    let ph = one_point(h, &k, &ctx.free, &ctx.cutoff.chi, ctx.phi0, 1e-6)?;
                    val += pf.direct * ph.direct;
                }
                out.push((val * e, e));
            }
            Ok((out, rej))
        })
        .collect();
    let mut pairs = Vec::with_capacity(samples);
    let mut rej = 0;
    for p in parts {
        let (o, r) = p?;
        pairs.extend(o);
        rej += r;
    }
    if rej as f64 > MAX_REJECTION * samples as f64 {
        return Err(KmsError::Guard(format!("{rej} of {samples} samples violate the Dyson hypothesis")));
    }
    let nn = pairs.len();
    let nf = nn as f64;
    let num: f64 = pairs.iter().map(|p| p.0).sum();
    let den: f64 = pairs.iter().map(|p| p.1).sum();
    let den_mean = den / nf;
    let den_var = pairs.iter().map(|p| (p.1 - den_mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let den_se = (den_var / nf).sqrt();
    if den_mean.abs() <= 3.0 * den_se {
        return Err(KmsError::UnstableRatio(format!("denominator {den_mean:e} ± {den_se:e}")));
    }
    let ratio = num / den;
    let loo: Vec<f64> = pairs.iter().map(|p| (num - p.0) / (den - p.1)).collect();
    let loo_mean = loo.iter().sum::<f64>() / nf;
    let jk_var = (nf - 1.0) / nf * loo.iter().map(|r| (r - loo_mean).powi(2)).sum::<f64>();
    Ok(TwoPointEstimate {
        value: ratio,
        std_error: jk_var.sqrt(),
        denominator: den_mean,
        denominator_se: den_se,
        n_samples: nn,
        n_rejected: rej,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cumulants::{count_wick_pairings, FieldKind as WickKind};
    use crate::model::{Cutoff, ModelParams};
    use crate::propagator::PropagatorKernel;

    fn small(n: usize, m: usize, beta: f64, eps: f64, phi0: f64) -> EntropyContext {
        let grid = GridSpec::cube(1, n as f64, n, m, beta).unwrap();
        let p = ModelParams::simple(beta, eps);
        let free = PropagatorKernel::build(&p, &grid).unwrap();
        EntropyContext::new(free, Cutoff::ones(&grid), phi0).unwrap()
    }

    fn gauss() -> Potential {
        Potential::Gaussian { width: 0.8, height: 1.0 }
    }

    #[test]
    fn vtilde_cutoff_matches_norms() {
        let grid = GridSpec::cube(1, 8.0, 8, 4, 1.5).unwrap();
        let cut = Cutoff::plateau(&grid, 2.0, 1.0).unwrap();
        let cov = GaussianCovariance::new(&grid, &gauss(), 1.0).unwrap();
        let b = Smearing::cutoff(&grid, &cut.g).unwrap();
        let params = ModelParams::simple(1.5, 1.0);
        let nm = crate::model::norms(&params, &grid, &gauss(), &cut).unwrap();
        // direct double sum
        let v = gauss().on_grid(&grid).unwrap();
        let mut direct = 0.0;
        for x in 0..8 {
            for y in 0..8 {
                direct += cut.g[x] * cut.g[y] * v[grid.diff_site(x, y)];
            }
        }
        direct *= 1.5;
        let got = cov.vtilde(&b, &b).unwrap();
        assert!((got - direct).abs() < 1e-12 * direct);
        assert!((got - nm.vtilde_gg).abs() < 1e-10 * direct);
        let zero = Smearing::new(LatticeField::zeros(&grid, FieldKind::Smearing));
        assert_eq!(cov.vtilde(&b, &zero).unwrap(), 0.0);
    }

    #[test]
    fn site_lines_give_eta() {
        let grid = GridSpec::cube(2, 6.0, 4, 3, 2.0).unwrap();
        let cov = GaussianCovariance::new(&grid, &gauss(), 1.0).unwrap();
        let v = gauss().on_grid(&grid).unwrap();
        let bs: Vec<Smearing> = [0, 5, 9].iter().map(|&s| Smearing::site_line(&grid, s).unwrap()).collect();
        let eta = cov.gram(&bs).unwrap();
        for (i, &si) in [0usize, 5, 9].iter().enumerate() {
            for (j, &sj) in [0usize, 5, 9].iter().enumerate() {
                let want = 2.0 * v[grid.diff_site(si, sj)];
                assert!((eta[(i, j)] - want).abs() < 1e-12);
            }
        }
        assert!((eta[(1, 1)] - 2.0 * v[0]).abs() < 1e-12);
    }

    #[test]
    fn covariance_diagonal() {
        let grid = GridSpec::cube(1, 5.0, 5, 4, 2.0).unwrap();
        let cov = GaussianCovariance::new(&grid, &gauss(), 1.0).unwrap();
        let v0 = gauss().on_grid(&grid).unwrap()[0];
        for i in 0..grid.spacetime_len() {
            assert!((cov.entry(i, i) - v0 / grid.dtau()).abs() < 1e-12);
        }
        assert_eq!(cov.entry(0, 5), 0.0);
    }

    #[test]
    fn exponential_closed_form() {
        let grid = GridSpec::cube(1, 1.0, 1, 1, 1.0).unwrap();
        let cov = GaussianCovariance::new(&grid, &Potential::Tabulated { values: vec![2.0] }, 1.0).unwrap();
        assert_eq!(gamma_exponentials(&cov, &[]).unwrap(), 1.0);
        let b = Smearing::time_integrated(&grid, &[1.0]).unwrap();
        assert!((cov.vtilde(&b, &b).unwrap() - 2.0).abs() < 1e-14);
        assert!((gamma_exponentials(&cov, &[b]).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn polynomial_pairings() {
        let grid = GridSpec::cube(1, 4.0, 4, 2, 1.0).unwrap();
        let cov = GaussianCovariance::new(&grid, &gauss(), 1.0).unwrap();
        let b = Smearing::site_line(&grid, 1).unwrap();
        let vbb = cov.vtilde(&b, &b).unwrap();
        assert!((gamma_polynomial(&cov, &[b.clone(), b.clone()]).unwrap() - vbb).abs() < 1e-13);
        assert_eq!(gamma_polynomial(&cov, &[b.clone(), b.clone(), b.clone()]).unwrap(), 0.0);
        let four = gamma_polynomial(&cov, &vec![b.clone(); 4]).unwrap();
        let pairings = count_wick_pairings(WickKind::Real, 4) as f64;
        assert_eq!(pairings, 3.0);
        assert!((four - pairings * vbb * vbb).abs() < 1e-12);
        assert!(matches!(gamma_polynomial(&cov, &vec![b; 14]), Err(KmsError::Limit(_))));
    }

    #[test]
    fn exponentials_match_truncated_polynomials() {
        let grid = GridSpec::cube(1, 4.0, 4, 2, 1.0).unwrap();
        let cov = GaussianCovariance::new(&grid, &gauss(), 0.2).unwrap();
        let b1 = Smearing::site_line(&grid, 0).unwrap();
        let b2 = Smearing::site_line(&grid, 2).unwrap();
        // e^Γ e^{⟨A⟩_{b1}+⟨A⟩_{b2}} with the pairing map applied to (b1+b2)^k/k!
        let exact = gamma_exponentials(&cov, &[b1.clone(), b2.clone()]).unwrap();
        let mut series = 0.0;
        let mut fact = 1.0;
        let mut last = 0.0;
        for k in 0..=6usize {
            if k > 0 {
                fact *= k as f64;
            }
            let mut term = 0.0;
            // expand (b1 + b2)^k over the choice of factors
            for mask in 0..(1u32 << k) {
                let fs: Vec<Smearing> =
                    (0..k).map(|i| if mask >> i & 1 == 1 { b2.clone() } else { b1.clone() }).collect();
                term += gamma_polynomial(&cov, &fs).unwrap();
            }
            // pairings carry +ṽ, the exponential map −ṽ: alternate by pair count
            let sign = if (k / 2) % 2 == 1 { -1.0 } else { 1.0 };
            last = sign * term / fact;
            series += last;
        }
        let s = cov.gram(&[b1, b2]).unwrap().sum();
        let next = (0.5 * s).powi(4) / 24.0;
        assert!((series - exact).abs() <= 2.0 * next, "{series} vs {exact}");
        assert!(last.abs() > 0.0);
    }

    #[test]
    fn sampling_convention() {
        // one site, one slice: A ~ N(0, v/Δu); E[e^{-⟨A⟩_b}] = e^{+½ṽ(b,b)}
        let grid = GridSpec::cube(1, 1.0, 1, 1, 1.0).unwrap();
        let cov = GaussianCovariance::new(&grid, &Potential::Tabulated { values: vec![0.5] }, 1.0).unwrap();
        let b = Smearing::time_integrated(&grid, &[1.0]).unwrap();
        let n = 40_000;
        let vals: Vec<f64> = (0..n).map(|s| (-b.pairing(&cov.sample(s), &grid)).exp()).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let vbb = cov.vtilde(&b, &b).unwrap();
        assert!((mean - (0.5 * vbb).exp()).abs() < 4.0 * sd / (n as f64).sqrt());
        assert!((gamma_exponentials(&cov, &[b]).unwrap() - (-0.5 * vbb).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_coupling_partition_is_one() {
        let ctx = small(4, 3, 1.0, 1.0, 0.3);
        let cov = GaussianCovariance::new(ctx.grid(), &gauss(), 0.0).unwrap();
        let z = partition_mc(&ctx, &cov, 300, 1).unwrap();
        assert_eq!(z.z, 1.0);
        assert_eq!(z.n_rejected, 0);
    }

    #[test]
    fn quartic_first_order_is_beta_density() {
        let ctx = small(4, 4, 1.0, 1.0, 0.0);
        let q = quartic_series(&ctx, &gauss(), 1).unwrap();
        assert_eq!(q.coefficients[0], 1.0);
        // ω(V) from the equal-time B₊ kernel, the same on every slice
        let grid = ctx.grid();
        let e = crate::cumulants::EdgeKernels::from_propagator(&ctx.free);
        let v = gauss().on_grid(grid).unwrap();
        let ad = grid.cell_volume();
        let mut wv = 0.0;
        for x in 0..4 {
            for y in 0..4 {
                let rho = |a: usize, b: usize| e.b_plus[(a, b)];
                wv += 0.5 * ad * ad * v[grid.diff_site(x, y)] * (rho(x, x) * rho(y, y) + rho(x, y) * rho(y, x));
            }
        }
        assert!((q.coefficients[1] + grid.beta() * wv).abs() < 1e-12 * wv);
        assert!(matches!(quartic_series(&ctx, &gauss(), 3), Err(KmsError::Limit(_))));
    }

    #[test]
    fn coefficient_estimator_first_order_is_exact_in_mean() {
        // E[c₂] = ½ Σ V (G_ii G_jj + G_ij G_ji) = −z₁
        let ctx = small(3, 3, 1.0, 1.0, 0.0);
        let cov = GaussianCovariance::new(ctx.grid(), &gauss(), 1.0).unwrap();
        let q = quartic_series(&ctx, &gauss(), 2).unwrap();
        let c = coupling_coefficients(&ctx, &cov, 40_000, 3).unwrap();
        assert!((c.order1 - q.coefficients[1]).abs() < 4.0 * c.order1_se, "{c:?} {q:?}");
        assert!((c.order2 - q.coefficients[2]).abs() < 4.0 * c.order2_se, "{c:?} {q:?}");
        let conn = q.connected.unwrap();
        assert!((q.coefficients[2] - conn - 0.5 * q.coefficients[1].powi(2)).abs() < 1e-12 * q.coefficients[2].abs());
    }

    #[test]
    fn two_point_free_limit() {
        let ctx = small(4, 3, 1.0, 1.0, 0.0);
        let cov = GaussianCovariance::new(ctx.grid(), &gauss(), 0.0).unwrap();
        let f = vec![1.0, 0.5, 0.0, 0.0];
        let h = vec![0.0, 1.0, 0.25, 0.0];
        let est = interacting_two_point_mc(&ctx, &cov, &f, &h, 64, 4).unwrap();
        let free = resolvent_kernel(&ctx.free, &LatticeField::zeros(ctx.grid(), FieldKind::Potential), Quadrature::Rectangle)
            .unwrap();
        let om = truncated_two_point(&free);
        let want = DVector::from_vec(f).dot(&(&om * DVector::from_vec(h)));
        assert!((est.value - want).abs() < 1e-12 * want.abs());
        assert!(est.std_error < 1e-12);
    }
}
