//! Interacting thermal propagator Δ^{βA} under an external space-time
//! potential: truncated Dyson series, exact resolvent and the time-sliced
//! ordered product; Ω and the one-point function of the auxiliary state.

use crate::error::{KmsError, Result};
use crate::model::{GridSpec, LatticeField};
use crate::propagator::PropagatorKernel;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// Largest space-time dimension handled with dense matrices.
pub const MAX_SPACETIME: usize = 2048;

/// How the potential enters each slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Quadrature {
    /// Riemann sum with weight Δu·A(u_j).
    Rectangle,
    /// Symmetric split: e^{-ΔuA/2} at both ends of every slice.
    Strang,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Provenance {
    Dyson { order: usize, quadrature: Quadrature },
    Resolvent { quadrature: Quadrature },
    Sliced { slices: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct DysonDiagnostics {
    /// Frobenius norms of the successive series terms.
    pub term_norms: Vec<f64>,
    /// β‖A‖_∞.
    pub beta_sup: f64,
    /// ‖W‖_∞·‖a^dΔu Δ^β‖, a bound on every term-to-term ratio.
    pub ratio_bound: f64,
    /// Bound on the omitted tail (∞ when the ratio bound is ≥ 1).
    pub tail_bound: f64,
    /// β‖A‖_∞ < 1.
    pub hypothesis_ok: bool,
}

/// Δ^{βA}[(x,ū_j),(y,u_k)] on the grid, in kernel units.
#[derive(Clone, Debug)]
pub struct InteractingKernel {
    pub grid: GridSpec,
    pub provenance: Provenance,
    pub potential: LatticeField,
    pub diagnostics: Option<DysonDiagnostics>,
    kernel: DMatrix<f64>,
}

impl InteractingKernel {
    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    /// a^dΔu times the kernel, acting on space-time grid functions.
    pub fn operator(&self) -> DMatrix<f64> {
        &self.kernel * (self.grid.cell_volume() * self.grid.dtau())
    }

    pub fn entry(&self, x: usize, j: usize, y: usize, k: usize) -> f64 {
        self.kernel[(self.grid.st_index(x, j), self.grid.st_index(y, k))]
    }

    /// Spatial kernel block between slices j and k.
    pub fn block(&self, j: usize, k: usize) -> DMatrix<f64> {
        let n = self.grid.total_sites();
        self.kernel.view((j * n, k * n), (n, n)).into_owned()
    }
}

fn check_inputs(free: &PropagatorKernel, a: &LatticeField) -> Result<()> {
    let grid = &free.grid;
    if a.n_sites() != grid.total_sites() || a.n_time() != grid.n_time {
        return Err(KmsError::Shape(format!(
            "potential is {}×{}, grid is {}×{}",
            a.n_sites(),
            a.n_time(),
            grid.total_sites(),
            grid.n_time
        )));
    }
    if grid.spacetime_len() > MAX_SPACETIME {
        return Err(KmsError::Limit(format!(
            "dense kernels need N·M ≤ {MAX_SPACETIME}, got {}",
            grid.spacetime_len()
        )));
    }
    Ok(())
}

/// Per-site weights w with the series Σ(-1)^n G(diag(w)G)^n, G the quadrature operator.
fn weights(a: &LatticeField, du: f64, quad: Quadrature) -> Vec<f64> {
    match quad {
        Quadrature::Rectangle => a.values().to_vec(),
        Quadrature::Strang => a.values().iter().map(|&v| -(-du * v).exp_m1() / du).collect(),
    }
}

fn scale_columns(m: &mut DMatrix<f64>, w: &[f64]) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= w[j];
    }
}

fn strang_dress(op: &mut DMatrix<f64>, a: &LatticeField, du: f64) {
    let half: Vec<f64> = a.values().iter().map(|&v| (-0.5 * du * v).exp()).collect();
    for i in 0..op.nrows() {
        for j in 0..op.ncols() {
            op[(i, j)] *= half[i] * half[j];
        }
    }
}

fn diagnostics(free: &PropagatorKernel, a: &LatticeField, w: &[f64], order: usize, norms: Vec<f64>) -> DysonDiagnostics {
    let beta_sup = free.beta * a.sup_norm();
    let wsup = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gnorm = free.operator_norm();
    let ratio_bound = wsup * gnorm;
    let tail_bound = if ratio_bound < 1.0 {
        gnorm * ratio_bound.powi(order as i32 + 1) / (1.0 - ratio_bound)
    } else {
        f64::INFINITY
    };
    DysonDiagnostics { term_norms: norms, beta_sup, ratio_bound, tail_bound, hypothesis_ok: beta_sup < 1.0 }
}

/// Partial Dyson sum Σ_{n ≤ order} (-1)^n Δ^β(AΔ^β)^n with the chosen time quadrature.
pub fn dyson_kernel(free: &PropagatorKernel, a: &LatticeField, order: usize, quad: Quadrature) -> Result<InteractingKernel> {
    check_inputs(free, a)?;
    let grid = &free.grid;
    let du = grid.dtau();
    let g = free.spacetime_operator();
    let w = weights(a, du, quad);
    let mut term = g.clone();
    let mut sum = g.clone();
    let mut norms = vec![term.norm()];
    for _ in 0..order {
        scale_columns(&mut term, &w);
        term = -(&term * &g);
        norms.push(term.norm());
        sum += &term;
    }
    if quad == Quadrature::Strang {
        strang_dress(&mut sum, a, du);
    }
    let kernel = sum / (grid.cell_volume() * du);
    let diag = diagnostics(free, a, &w, order, norms);
    Ok(InteractingKernel {
        grid: grid.clone(),
        provenance: Provenance::Dyson { order, quadrature: quad },
        potential: a.clone(),
        diagnostics: Some(diag),
        kernel,
    })
}

/// Resolved series (1 + GW)^{-1}G as an operator (a^dΔu·kernel).
pub fn resolvent_operator(free: &PropagatorKernel, a: &LatticeField, quad: Quadrature) -> Result<DMatrix<f64>> {
    check_inputs(free, a)?;
    let du = free.grid.dtau();
    let g = free.spacetime_operator();
    resolvent_with(&g, a, du, quad)
}

pub(crate) fn resolvent_with(g: &DMatrix<f64>, a: &LatticeField, du: f64, quad: Quadrature) -> Result<DMatrix<f64>> {
    let w = weights(a, du, quad);
    let mut lhs = g.clone();
    scale_columns(&mut lhs, &w);
    for i in 0..lhs.nrows() {
        lhs[(i, i)] += 1.0;
    }
    let mut op = lhs
        .lu()
        .solve(g)
        .ok_or_else(|| KmsError::NearCritical("1 + Δ^β A is singular".into()))?;
    if quad == Quadrature::Strang {
        strang_dress(&mut op, a, du);
    }
    Ok(op)
}

/// Exact sum of the Dyson series on the grid.
pub fn resolvent_kernel(free: &PropagatorKernel, a: &LatticeField, quad: Quadrature) -> Result<InteractingKernel> {
    let op = resolvent_operator(free, a, quad)?;
    let grid = &free.grid;
    let w = weights(a, grid.dtau(), quad);
    Ok(InteractingKernel {
        grid: grid.clone(),
        provenance: Provenance::Resolvent { quadrature: quad },
        potential: a.clone(),
        diagnostics: Some(diagnostics(free, a, &w, usize::MAX / 2, Vec::new())),
        kernel: op / (grid.cell_volume() * grid.dtau()),
    })
}

/// Ordered product of Strang slice transfers e^{-ΔuA_j/2}e^{-ΔuK}e^{-ΔuA_{j+1}/2},
/// assembled with the two-branch formula and (1 - T_full)^{-1}.
pub fn sliced_kernel(free: &PropagatorKernel, a: &LatticeField) -> Result<InteractingKernel> {
    check_inputs(free, a)?;
    let grid = &free.grid;
    let n = grid.total_sites();
    let m = grid.n_time;
    let du = grid.dtau();
    let step: Vec<f64> = free.k_values().iter().map(|&k| (-du * k).exp()).collect();
    let e = free.site_operator(&step);
    let half = |j: usize| -> Vec<f64> { a.slice(j % m).iter().map(|&v| (-0.5 * du * v).exp()).collect() };
    let transfers: Vec<DMatrix<f64>> = (0..m)
        .map(|j| {
            let (l, r) = (half(j), half(j + 1));
            DMatrix::from_fn(n, n, |x, y| l[x] * e[(x, y)] * r[y])
        })
        .collect();
    // prefix[k] = S_0⋯S_{k-1}, suffix[j] = S_j⋯S_{M-1}
    let id = DMatrix::<f64>::identity(n, n);
    let mut prefix = vec![id.clone()];
    for t in &transfers {
        let next = prefix.last().unwrap() * t;
        prefix.push(next);
    }
    let mut suffix = vec![id.clone(); m + 1];
    for j in (0..m).rev() {
        suffix[j] = &transfers[j] * &suffix[j + 1];
    }
    let full = &prefix[m];
    let one_minus = &id - full;
    let lu = one_minus.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| KmsError::NearCritical("1 - T_full is singular: spectrum of K + A touches 0".into()))?;
    let cond = one_minus.norm() * inv.norm();
    if !cond.is_finite() || cond > 1e12 {
        return Err(KmsError::NearCritical(format!("1 - T_full has condition number {cond:.3e}")));
    }
    let mut op = DMatrix::zeros(n * m, n * m);
    for j in 0..m {
        let wrap = &suffix[j] * &inv;
        let mut forward = id.clone();
        for k in 0..m {
            let mut blk = &wrap * &prefix[k];
            if k > j {
                forward = &forward * &transfers[k - 1];
                blk += &forward;
            }
            op.view_mut((j * n, k * n), (n, n)).copy_from(&blk);
        }
    }
    let kernel = op / grid.cell_volume();
    Ok(InteractingKernel {
        grid: grid.clone(),
        provenance: Provenance::Sliced { slices: m },
        potential: a.clone(),
        diagnostics: None,
        kernel,
    })
}

/// Ω = δ/a^d + Δ^{βA}(0, 0) with θ(0) = 0, i.e. the u → 0⁺ limit.
pub fn truncated_two_point(k: &InteractingKernel) -> DMatrix<f64> {
    let n = k.grid.total_sites();
    let mut omega = k.block(0, 0);
    for i in 0..n {
        omega[(i, i)] += 1.0 / k.grid.cell_volume();
    }
    omega
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct OnePoint {
    /// ∫ du ⟨f, Δ^{βA}(0,u) A(u) χφ₀⟩.
    pub direct: f64,
    /// ⟨f, χφ₀⟩ - ∫ du ⟨f, Δ^{βA}(0,u)(∂_u + K)χφ₀⟩.
    pub by_parts: f64,
    pub discrepancy: f64,
}

/// One-point function ω^{βA}(Ψ(f)) of the auxiliary state, in both forms.
/// The kernel's own potential (already dressed with g) multiplies χφ₀.
pub fn one_point(
    f: &[f64],
    k: &InteractingKernel,
    free: &PropagatorKernel,
    chi: &[f64],
    phi0: f64,
    tol: f64,
) -> Result<OnePoint> {
    let grid = &k.grid;
    let n = grid.total_sites();
    let m = grid.n_time;
    if f.len() != n || chi.len() != n {
        return Err(KmsError::Shape("test function and χ must live on the sites".into()));
    }
    let ad = grid.cell_volume();
    let op = k.operator();
    let phi: Vec<f64> = chi.iter().map(|c| c * phi0).collect();
    let a_phi = DVector::from_fn(n * m, |i, _| k.potential.values()[i] * phi[i % n]);
    let kd = crate::fft::SiteFft::new(grid).apply_multiplier(&phi, &free.generator_constant_multiplier());
    let k_phi = DVector::from_fn(n * m, |i, _| kd[i % n]);
    let top = op.rows(0, n);
    let v1 = &top * &a_phi;
    let v2 = &top * &k_phi;
    let direct: f64 = (0..n).map(|x| ad * f[x] * v1[x]).sum();
    let by_parts: f64 = (0..n).map(|x| ad * f[x] * (phi[x] - v2[x])).sum();
    let discrepancy = (direct - by_parts).abs();
    if discrepancy > tol * direct.abs().max(by_parts.abs()).max(1e-300) && discrepancy > tol {
        return Err(KmsError::IntegrationOrder(format!(
            "one-point forms differ: {direct:e} vs {by_parts:e}"
        )));
    }
    Ok(OnePoint { direct, by_parts, discrepancy })
}

/// Little-endian dump: b"BKMSKRN1", u64 dim, u64 n_sites per axis, u64 n_time,
/// f64 beta, u64 provenance tag (0 dyson, 1 resolvent, 2 sliced), u64 order
/// or slice count, then the (N·M)² kernel entries row-major as f64.
pub fn write_kernel_bin(path: &Path, k: &InteractingKernel) -> Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(64 + 8 * k.kernel.len());
    buf.extend_from_slice(b"BKMSKRN1");
    buf.extend_from_slice(&(k.grid.dim() as u64).to_le_bytes());
    for &s in &k.grid.n_sites {
        buf.extend_from_slice(&(s as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(k.grid.n_time as u64).to_le_bytes());
    buf.extend_from_slice(&k.grid.beta().to_le_bytes());
    let (tag, extra) = match k.provenance {
        Provenance::Dyson { order, .. } => (0u64, order as u64),
        Provenance::Resolvent { .. } => (1, 0),
        Provenance::Sliced { slices } => (2, slices as u64),
    };
    buf.extend_from_slice(&tag.to_le_bytes());
    buf.extend_from_slice(&extra.to_le_bytes());
    let l = k.kernel.nrows();
    for i in 0..l {
        for j in 0..l {
            buf.extend_from_slice(&k.kernel[(i, j)].to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}
