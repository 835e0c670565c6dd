//! Oracle checks runnable from the binary. `quick` keeps to closed forms and
//! exact counts; the full run adds small cross-module comparisons.

use bose_kms::bounds::{stirling_ratio_check, ctilde_state};
use bose_kms::cumulants::{bell_number, connected_graph_count, count_wick_pairings, enumerate_partitions, perfect_matchings, FieldKind};
use bose_kms::dyson::{dyson_kernel, sliced_kernel, Quadrature};
use bose_kms::entropy::{s0_lambda, s0_series, t1_condensate, EntropyContext};
use bose_kms::hs::{gamma_exponentials, GaussianCovariance};
use bose_kms::model::{Cutoff, FieldKind as Kind, GridSpec, LatticeField, ModelParams, Potential};
use bose_kms::pathint::{mc_two_point_external, sample_bridge, McOptions};
use bose_kms::propagator::{position_kernel, position_kernel_auto, PropagatorKernel};
use bose_kms::Result;

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((pass, detail)) => Check { name, pass, detail },
        Err(e) => Check { name, pass: false, detail: format!("error: {e}") },
    }
}

pub fn quick() -> Vec<Check> {
    vec![
        check("bose commutator", || {
            let grid = GridSpec::cube(1, 32.0, 32, 4, 1.0)?;
            let k = PropagatorKernel::build(&ModelParams::simple(1.0, 0.5), &grid)?;
            let worst = (0..k.n_momenta()).map(|p| (k.bose(p).0 - k.bose(p).1 - 1.0).abs()).fold(0.0, f64::max);
            Ok((worst < 1e-12, format!("max |B₋−B₊−1| = {worst:.2e}")))
        }),
        check("bell numbers", || {
            let want = [1u128, 1, 2, 5, 15, 52, 203];
            let ok = (0..7).all(|n| bell_number(n) == want[n]);
            let enum_ok = (1..=6).all(|n| enumerate_partitions(n).map(|p| p.len() as u128 == bell_number(n)).unwrap_or(false));
            Ok((ok && enum_ok, "B(0..6) and enumeration".into()))
        }),
        check("connected graphs", || {
            let got: Vec<u128> = (1..=4).map(connected_graph_count).collect();
            Ok((got == vec![1, 1, 4, 38], format!("{got:?}")))
        }),
        check("pairing counts", || {
            let ok = (1..=6).all(|n| {
                count_wick_pairings(FieldKind::Real, 2 * n) == perfect_matchings(2 * n).len() as u128
                    && count_wick_pairings(FieldKind::Charged, n) == (1..=n as u128).product::<u128>()
            });
            Ok((ok, "(2N−1)!! and N! for N ≤ 6".into()))
        }),
        check("empty gaussian average", || {
            let grid = GridSpec::cube(1, 2.0, 2, 2, 1.0)?;
            let cov = GaussianCovariance::new(&grid, &Potential::Gaussian { width: 0.5, height: 1.0 }, 1.0)?;
            let v = gamma_exponentials(&cov, &[])?;
            Ok((v == 1.0, format!("{v}")))
        }),
        check("single-step bridge", || {
            let p = sample_bridge(&[0.0, 1.0], &[2.0, 3.0], 1.0, 1, 1.0, 0)?;
            Ok((p.positions == vec![vec![0.0, 1.0], vec![2.0, 3.0]], "endpoints only".into()))
        }),
        check("stirling ratio", || {
            let rows = stirling_ratio_check(200)?;
            let ok = rows.iter().filter(|r| r.k >= 2).all(|r| r.holds);
            Ok((ok, "k = 2..200".into()))
        }),
        check("C̃ limit", || {
            let small = ctilde_state(1.0f64, -60.0, 3)?;
            Ok((small < 1e-25, format!("C̃(−60) = {small:.2e}")))
        }),
    ]
}

pub fn full() -> Vec<Check> {
    let mut out = quick();
    out.push(check("position kernel vs FFT", || {
        let grid = GridSpec::cube(1, 8.0, 32, 4, 1.0)?;
        let k = PropagatorKernel::build(&ModelParams::simple(1.0, 0.5), &grid)?;
        let u = 0.5;
        let fft = k.position_kernel_fft(u);
        let mut worst = 0.0f64;
        for s in 0..32 {
            let x = grid.coord(s);
            let direct = position_kernel_auto(&k, &x, &[0.0], u)?;
            worst = worst.max((direct - fft[s]).abs());
        }
        Ok((worst < 1e-8, format!("max diff {worst:.2e}")))
    }));
    out.push(check("dyson vs sliced", || {
        let grid = GridSpec::cube(1, 8.0, 8, 16, 1.0)?;
        let params = ModelParams::simple(1.0, 2.0);
        let free = PropagatorKernel::build(&params, &grid)?;
        let a = LatticeField::from_fn(&grid, Kind::Potential, |x, j| {
            0.25 + 0.25 * (0.8 * x as f64).cos() * (0.4 * j as f64).sin()
        })?;
        let d = dyson_kernel(&free, &a, 12, Quadrature::Strang)?;
        let s = sliced_kernel(&free, &a)?;
        let rel = (d.kernel() - s.kernel()).norm() / s.kernel().norm();
        Ok((rel < 1e-6, format!("relative difference {rel:.2e}")))
    }));
    out.push(check("entropy forms", || {
        let grid = GridSpec::cube(1, 6.0, 6, 4, 1.0)?;
        let free = PropagatorKernel::build(&ModelParams::simple(1.0, 1.0), &grid)?;
        let ctx = EntropyContext::new(free, Cutoff::ones(&grid), 0.7)?;
        let a = LatticeField::from_fn(&grid, Kind::Potential, |x, j| 0.1 + 0.05 * (x as f64 + j as f64).sin())?;
        let s = s0_series(&ctx, &a, 40)?.value;
        let l = s0_lambda(&ctx, &a, 16)?;
        let t1 = t1_condensate(&ctx, &a)?;
        let ok = (s - l).abs() < 1e-8 && t1.discrepancy < 1e-6 * t1.primary.abs().max(1e-12);
        Ok((ok, format!("|series−λ| = {:.2e}, T₁ gap = {:.2e}", (s - l).abs(), t1.discrepancy)))
    }));
    out.push(check("constant-field Feynman–Kac", || {
        let grid = GridSpec::cube(1, 6.0, 12, 4, 1.0)?;
        let params = ModelParams::simple(1.0, 0.5);
        let a = LatticeField::constant(&grid, 0.25, Kind::Potential);
        let est = mc_two_point_external(&[0.0], &[1.0], &a, &params, &grid, &McOptions::new(8, 4000, 1))?;
        let shifted = PropagatorKernel::build_with_mu(&params, &grid, params.mu_eff() - 0.25)?;
        let exact = position_kernel(&shifted, &[0.0], &[1.0], 0.0, 7)?;
        let gap = (est.mean - exact).abs();
        Ok((gap <= 3.0 * est.std_error + 1e-12 * exact, format!("gap {gap:.2e}")))
    }));
    out
}
