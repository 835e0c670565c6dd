//! Relative-entropy functionals T₀, T₁, T₂ of the auxiliary state and
//! W_A = T₀ + T₁ + T₂, each term in its equivalent forms.

use crate::dyson::{resolvent_with, Quadrature};
use crate::error::{KmsError, Result};
use crate::model::{Cutoff, GridSpec, LatticeField};
use crate::propagator::PropagatorKernel;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

/// Default number of Gauss–Legendre nodes for the λ-integral.
pub const DEFAULT_LAMBDA_NODES: usize = 8;

/// Gauss–Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// Precomputed free operators shared by every entropy evaluation on one grid.
#[derive(Clone, Debug)]
pub struct EntropyContext {
    pub free: PropagatorKernel,
    pub cutoff: Cutoff,
    pub phi0: f64,
    /// a^dΔu·Δ^β on space-time functions.
    pub gop: DMatrix<f64>,
    /// Its inverse, the discrete ∂_u + K.
    pub generator: DMatrix<f64>,
}

impl EntropyContext {
    pub fn new(free: PropagatorKernel, cutoff: Cutoff, phi0: f64) -> Result<Self> {
        let l = free.grid.spacetime_len();
        if l > crate::dyson::MAX_SPACETIME {
            return Err(KmsError::Limit(format!("entropy needs N·M ≤ {}, got {l}", crate::dyson::MAX_SPACETIME)));
        }
        if cutoff.g.len() != free.grid.total_sites() {
            return Err(KmsError::Shape("cutoff and grid disagree".into()));
        }
        let gop = free.spacetime_operator();
        let generator = free.generator();
        Ok(EntropyContext { free, cutoff, phi0, gop, generator })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.free.grid
    }

    fn measure(&self) -> f64 {
        self.grid().cell_volume() * self.grid().dtau()
    }

    /// g·A on every slice.
    pub fn dressed(&self, a: &LatticeField) -> LatticeField {
        a.times_sites(&self.cutoff.g)
    }

    /// diag(gA)·(a^dΔu Δ^β).
    pub fn x_matrix(&self, a: &LatticeField) -> DMatrix<f64> {
        let ga = self.dressed(a);
        let mut x = self.gop.clone();
        for (i, mut row) in x.row_iter_mut().enumerate() {
            row *= ga.values()[i];
        }
        x
    }

    fn check(&self, a: &LatticeField) -> Result<()> {
        if a.n_sites() != self.grid().total_sites() || a.n_time() != self.grid().n_time {
            return Err(KmsError::Shape("potential and grid disagree".into()));
        }
        Ok(())
    }

    /// ‖gA‖_∞·‖a^dΔu Δ^β‖, the contraction ratio of the series in A.
    pub fn ratio_bound(&self, a: &LatticeField) -> f64 {
        self.dressed(a).sup_norm() * self.free.operator_norm()
    }
}

/// T₀ = -ω^β(V_A) = -Σ_{x,u} g A ρ a^d Δu with ρ the B₊ diagonal density.
pub fn t0_free_expectation(ctx: &EntropyContext, a: &LatticeField) -> Result<f64> {
    ctx.check(a)?;
    let rho = ctx.free.density();
    let ga = ctx.dressed(a);
    Ok(-rho * ctx.measure() * ga.values().iter().sum::<f64>())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SeriesValue {
    pub value: f64,
    pub tail_bound: f64,
    pub terms: usize,
}

fn apply_chi(m: &mut DMatrix<f64>, chi: &[f64], n: usize) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= chi[j % n];
    }
}

/// Σ_{n=2}^{n_trunc} (-1)^n/n Tr((AΔ^β)^n χ).
pub fn s0_series(ctx: &EntropyContext, a: &LatticeField, n_trunc: usize) -> Result<SeriesValue> {
    ctx.check(a)?;
    let rho = ctx.ratio_bound(a);
    if rho >= 1.0 {
        return Err(KmsError::Guard(format!("series ratio ‖gA‖‖Δ^β‖ = {rho:.4} ≥ 1")));
    }
    let x = ctx.x_matrix(a);
    let n = ctx.grid().total_sites();
    let mut xc = x.clone();
    apply_chi(&mut xc, &ctx.cutoff.chi, n);
    // power holds X^{k-1}
    let mut power = x.clone();
    let mut value = 0.0;
    for k in 2..=n_trunc {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        value += sign / k as f64 * (&power * &xc).trace();
        power = &power * &x;
    }
    let fro2 = x.norm_squared();
    let tail_bound = fro2 * rho.powi(n_trunc.max(1) as i32 - 1) / ((n_trunc + 1) as f64 * (1.0 - rho));
    Ok(SeriesValue { value, tail_bound, terms: n_trunc })
}

/// Tr(A ∫₀¹ dλ (Δ^β - Δ^{β,λA}) χ) by Gauss–Legendre quadrature in λ over
/// exact grid resolvents.
pub fn s0_lambda(ctx: &EntropyContext, a: &LatticeField, n_lambda: usize) -> Result<f64> {
    ctx.check(a)?;
    let ga = ctx.dressed(a);
    let du = ctx.grid().dtau();
    let n = ctx.grid().total_sites();
    let (nodes, weights) = gauss_legendre_unit(n_lambda);
    let vals: Vec<Result<f64>> = nodes
        .par_iter()
        .zip(&weights)
        .map(|(&lam, &w)| {
            let op = resolvent_with(&ctx.gop, &ga.scaled(lam), du, Quadrature::Rectangle)?;
            let diff = &ctx.gop - op;
            let tr: f64 = (0..diff.nrows()).map(|i| ga.values()[i] * diff[(i, i)] * ctx.cutoff.chi[i % n]).sum();
            Ok(w * tr)
        })
        .collect();
    vals.into_iter().sum()
}

/// Tr X - log det(1 + X), X = gA·a^dΔuΔ^β; the resummed S₀.
pub fn s0_logdet(ctx: &EntropyContext, a: &LatticeField) -> Result<f64> {
    ctx.check(a)?;
    let x = ctx.x_matrix(a);
    Ok(x.trace() - log_det_one_plus(x)?)
}

/// log det(1 + X) from the LU factors; fails when the determinant is not positive.
pub fn log_det_one_plus(mut x: DMatrix<f64>) -> Result<f64> {
    for i in 0..x.nrows() {
        x[(i, i)] += 1.0;
    }
    let lu = x.lu();
    let u = lu.u();
    let p = lu.p();
    let mut sign = if p.determinant::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let mut acc = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        if d == 0.0 {
            return Err(KmsError::NearCritical("1 + AΔ^β is singular".into()));
        }
        if d < 0.0 {
            sign = -sign;
        }
        acc += d.abs().ln();
    }
    if sign < 0.0 {
        return Err(KmsError::NearCritical("det(1 + AΔ^β) < 0".into()));
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CondensateTerm {
    /// ⟨Aχ₁φ₀, Δ^{βA} Aχ₂φ₀⟩_u.
    pub primary: f64,
    /// ⟨Aχ₁φ₀, χ₂φ₀⟩ - ⟨χ₁φ₀, (∂_u+K)χ₂φ₀⟩ + ⟨(∂_u+K)*χ₁φ₀, Δ^{βA}(∂_u+K)χ₂φ₀⟩.
    pub by_parts: f64,
    pub discrepancy: f64,
}

/// T₁ = S_{φ₀} - S₀ in both forms.
pub fn t1_condensate(ctx: &EntropyContext, a: &LatticeField) -> Result<CondensateTerm> {
    ctx.check(a)?;
    if ctx.phi0 == 0.0 {
        return Ok(CondensateTerm { primary: 0.0, by_parts: 0.0, discrepancy: 0.0 });
    }
    let ga = ctx.dressed(a);
    let op = resolvent_with(&ctx.gop, &ga, ctx.grid().dtau(), Quadrature::Rectangle)?;
    Ok(t1_with_operator(ctx, &ga, &op))
}

pub(crate) fn t1_with_operator(ctx: &EntropyContext, ga: &LatticeField, op: &DMatrix<f64>) -> CondensateTerm {
    let n = ctx.grid().total_sites();
    let l = ctx.grid().spacetime_len();
    let mu = ctx.measure();
    let phi1 = DVector::from_fn(l, |i, _| ctx.cutoff.chi1[i % n] * ctx.phi0);
    let phi2 = DVector::from_fn(l, |i, _| ctx.cutoff.chi2[i % n] * ctx.phi0);
    let a_vec = DVector::from_vec(ga.values().to_vec());
    let aphi1 = a_vec.component_mul(&phi1);
    let aphi2 = a_vec.component_mul(&phi2);
    let primary = mu * aphi1.dot(&(op * &aphi2));
    let xphi2 = &ctx.generator * &phi2;
    let xtphi1 = ctx.generator.tr_mul(&phi1);
    let by_parts = mu * (aphi1.dot(&phi2) - phi1.dot(&xphi2) + xtphi1.dot(&(op * &xphi2)));
    CondensateTerm { primary, by_parts, discrepancy: (primary - by_parts).abs() }
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyBreakdown {
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    pub w_a: f64,
    pub t1_by_parts: f64,
    pub t2_series: Option<f64>,
    pub t2_series_tail: Option<f64>,
    pub t2_lambda: f64,
    pub t1_discrepancy: f64,
    pub t2_lambda_discrepancy: f64,
    pub t2_series_discrepancy: Option<f64>,
    /// S_{φ₀} = ω^β(V_A) + W_A; equals t1 + t2 by construction.
    pub s_phi0: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct EntropyOptions {
    pub n_lambda: usize,
    pub n_series: usize,
    pub tol: f64,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        EntropyOptions { n_lambda: DEFAULT_LAMBDA_NODES, n_series: 40, tol: 1e-6 }
    }
}

/// W_A = T₀ + T₁ + T₂ with every alternative form evaluated and compared.
/// T₂ is taken from the log-determinant.
pub fn w_a(ctx: &EntropyContext, a: &LatticeField, opts: &EntropyOptions) -> Result<EntropyBreakdown> {
    let t0 = t0_free_expectation(ctx, a)?;
    let t1 = t1_condensate(ctx, a)?;
    let t2 = s0_logdet(ctx, a)?;
    let t2_lambda = s0_lambda(ctx, a, opts.n_lambda)?;
    let series = if ctx.ratio_bound(a) < 1.0 { Some(s0_series(ctx, a, opts.n_series)?) } else { None };
    let scale = t2.abs().max(1e-300);
    let lam_disc = (t2_lambda - t2).abs();
    if lam_disc > opts.tol * scale && lam_disc > opts.tol * 1e-3 {
        return Err(KmsError::FormMismatch(format!("S₀: log-det {t2:e} vs λ-integral {t2_lambda:e}")));
    }
    if let Some(s) = series {
        let d = (s.value - t2).abs();
        if d > s.tail_bound + opts.tol * scale && d > opts.tol * 1e-3 {
            return Err(KmsError::FormMismatch(format!("S₀: log-det {t2:e} vs series {:e}", s.value)));
        }
    }
    let t1_scale = t1.primary.abs().max(1e-300);
    if t1.discrepancy > opts.tol * t1_scale && t1.discrepancy > opts.tol * 1e-3 {
        return Err(KmsError::FormMismatch(format!("T₁: {:e} vs {:e}", t1.primary, t1.by_parts)));
    }
    Ok(EntropyBreakdown {
        t0,
        t1: t1.primary,
        t2,
        w_a: t0 + t1.primary + t2,
        t1_by_parts: t1.by_parts,
        t2_series: series.map(|s| s.value),
        t2_series_tail: series.map(|s| s.tail_bound),
        t2_lambda,
        t1_discrepancy: t1.discrepancy,
        t2_lambda_discrepancy: lam_disc,
        t2_series_discrepancy: series.map(|s| (s.value - t2).abs()),
        s_phi0: t1.primary + t2,
    })
}
