mod io;
mod selftest;

use bose_kms::bounds::{e_bound, estimate_ctilde, partition_interval, region, RegionInputs, Verdict};
use bose_kms::cumulants::{bell_number, connected_graph_count, count_wick_pairings, FieldKind as WickKind};
use bose_kms::dyson::{dyson_kernel, resolvent_kernel, sliced_kernel, write_kernel_bin, Quadrature};
use bose_kms::entropy::{w_a, EntropyContext, EntropyOptions};
use bose_kms::hs::{interacting_two_point_mc, partition_mc, GaussianCovariance};
use bose_kms::model::{norms, GNorm, Model};
use bose_kms::pathint::{free_strata_sum, mc_two_point_external, mc_two_point_hs, McOptions, DEFAULT_STEPS_PER_BETA};
use bose_kms::propagator::{auto_windings, PropagatorKernel};
use bose_kms::{KmsError, Result};
use clap::{Parser, Subcommand, ValueEnum};
use io::{fmt, read_field, read_sites, write_csv, write_json, RunManifest};
use serde::Serialize;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "bose-kms", version, about = "Thermal propagators, Feynman–Kac and Hubbard–Stratonovich estimators for the interacting Bose gas")]
struct Cli {
    /// Worker threads for sampling loops (results do not depend on it).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Real,
    Charged,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Method {
    Dyson,
    Resolvent,
    Sliced,
}

#[derive(Clone, Copy, ValueEnum)]
enum Quad {
    Rectangle,
    Strang,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L1,
    L2,
    Sup,
}

#[derive(Subcommand)]
enum Cmd {
    /// Momentum-space thermal propagator Δ̂^β(u, p).
    Propagator {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        u: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combinatorial counts.
    Cumulants {
        #[arg(long)]
        count_graphs: Option<usize>,
        #[arg(long)]
        count_pairings: Option<usize>,
        #[arg(long, value_enum, default_value = "real")]
        kind: Kind,
        #[arg(long)]
        bell: Option<usize>,
    },
    /// Interacting kernel under an external potential A.
    Dyson {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 12)]
        order: usize,
        #[arg(long, value_enum, default_value = "dyson")]
        method: Method,
        #[arg(long, value_enum, default_value = "strang")]
        quadrature: Quad,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feynman–Kac estimate of the two-point kernel between two sites.
    Mc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "hs", required_unless_present = "hs")]
        field: Option<PathBuf>,
        #[arg(long)]
        hs: bool,
        #[arg(long)]
        x: usize,
        #[arg(long)]
        y: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_STEPS_PER_BETA)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// W_A = T₀ + T₁ + T₂ with per-form diagnostics.
    Entropy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo estimate of the relative partition function.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        xi: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo estimate of ⟨f, S h⟩.
    Twopoint {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        f: PathBuf,
        #[arg(long)]
        h: PathBuf,
        #[arg(long, default_value_t = 2_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        xi: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convergence-region sweep.
    Region {
        #[arg(long)]
        config: PathBuf,
        /// e.g. beta=0.1:10:200,phi0=0:2:50
        #[arg(long)]
        sweep: String,
        #[arg(long, value_enum, default_value = "l1")]
        g_norm: NormArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Oracle checks.
    Selftest {
        #[arg(long)]
        quick: bool,
    },
}

pub fn run(args: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args.clone()) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let command = args.iter().map(|a| a.to_string_lossy().into_owned()).collect::<Vec<_>>().join(" ");
    match dispatch(cli.cmd, command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn finish(out: &Path, command: String, model: &Model, seed: Option<u64>, start: Instant) -> Result<i32> {
    finish_with(out, command, model, seed, start, Vec::new())
}

fn finish_with(out: &Path, command: String, model: &Model, seed: Option<u64>, start: Instant, notes: Vec<String>) -> Result<i32> {
    let mut m = RunManifest::new(command, model.config_hash.clone(), seed, start.elapsed().as_secs_f64(), vec![out.display().to_string()]);
    m.notes = notes;
    m.write_next_to(out)?;
    Ok(0)
}

fn dispatch(cmd: Cmd, command: String) -> Result<i32> {
    let start = Instant::now();
    match cmd {
        Cmd::Propagator { config, u, out } => {
            let model = Model::load(&config)?;
            let k = PropagatorKernel::build(&model.params, &model.grid)?;
            let rows: Vec<Vec<String>> =
                (0..k.n_momenta()).map(|p| vec![p.to_string(), fmt(k.k_values()[p]), fmt(k.value(u, p))]).collect();
            write_csv(&out, &["p", "k", "value"], &rows)?;
            finish(&out, command, &model, None, start)
        }
        Cmd::Cumulants { count_graphs, count_pairings, kind, bell } => {
            let mut any = false;
            if let Some(n) = count_graphs {
                println!("{}", connected_graph_count(n));
                any = true;
            }
            if let Some(n) = count_pairings {
                // N pairs of real factors, or N Ψ/Ψ* pairs
                let count = match kind {
                    Kind::Real => count_wick_pairings(WickKind::Real, 2 * n),
                    Kind::Charged => count_wick_pairings(WickKind::Charged, n),
                };
                println!("{count}");
                any = true;
            }
            if let Some(n) = bell {
                println!("{}", bell_number(n));
                any = true;
            }
            if !any {
                eprintln!("error: give --count-graphs, --count-pairings or --bell");
                return Ok(2);
            }
            Ok(0)
        }
        Cmd::Dyson { config, field, order, method, quadrature, out } => {
            let model = Model::load(&config)?;
            let free = PropagatorKernel::build(&model.params, &model.grid)?;
            let a = read_field(&field, &model.grid)?;
            let quad = match quadrature {
                Quad::Rectangle => Quadrature::Rectangle,
                Quad::Strang => Quadrature::Strang,
            };
            let k = match method {
                Method::Dyson => dyson_kernel(&free, &a, order, quad)?,
                Method::Resolvent => resolvent_kernel(&free, &a, quad)?,
                Method::Sliced => sliced_kernel(&free, &a)?,
            };
            if let Some(d) = &k.diagnostics {
                if method == Method::Dyson && !d.hypothesis_ok {
                    eprintln!("warning: β‖A‖∞ = {:.4} ≥ 1, the series hypothesis does not hold", d.beta_sup);
                }
            }
            write_kernel_bin(&out, &k)?;
            finish(&out, command, &model, None, start)
        }
        Cmd::Mc { config, field, hs, x, y, samples, seed, n_max, steps, out } => {
            let model = Model::load(&config)?;
            let grid = &model.grid;
            let n = grid.total_sites();
            if x >= n || y >= n {
                return Err(KmsError::Shape(format!("site index outside 0..{n}")));
            }
            let (px, py) = (grid.coord(x), grid.coord(y));
            let n_max = n_max.unwrap_or_else(|| auto_windings(model.params.beta, model.params.mu_eff()).max(1));
            let opts = McOptions { n_max, samples, seed, steps_per_beta: steps };
            let est = if hs {
                mc_two_point_hs(&px, &py, &model.potential, &model.cutoff, &model.params, grid, &opts)?
            } else {
                let a = read_field(field.as_ref().expect("clap enforces --field"), grid)?;
                mc_two_point_external(&px, &py, &a, &model.params, grid, &opts)?
            };
            // the per-stratum table goes to a CSV next to the flat JSON
            let mut strata_path = out.as_os_str().to_owned();
            strata_path.push(".strata.csv");
            let strata_path = PathBuf::from(strata_path);
            let rows: Vec<Vec<String>> = est
                .strata
                .iter()
                .map(|r| vec![fmt(r.tau), fmt(r.weight), fmt(r.mean), fmt(r.std_error), r.n_samples.to_string(), fmt(r.step)])
                .collect();
            write_csv(&strata_path, &["tau", "weight", "mean", "std_error", "n_samples", "step"], &rows)?;
            #[derive(Serialize)]
            struct Out<'a> {
                x: usize,
                y: usize,
                estimator: &'a str,
                free_reference: f64,
                mean: f64,
                std_error: f64,
                n_samples: usize,
                seed: u64,
                n_strata: usize,
                strata: String,
                tail_bound: f64,
                steps_per_beta: usize,
                #[serde(skip_serializing_if = "Option::is_none")]
                max_weight: Option<f64>,
            }
            let free_reference = free_strata_sum(&px, &py, &model.params, grid, n_max);
            let strata = strata_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            write_json(
                &out,
                &Out {
                    x,
                    y,
                    estimator: if hs { "hs" } else { "external" },
                    free_reference,
                    mean: est.mean,
                    std_error: est.std_error,
                    n_samples: est.n_samples,
                    seed: est.seed,
                    n_strata: est.strata.len(),
                    strata,
                    tail_bound: est.tail_bound,
                    steps_per_beta: est.steps_per_beta,
                    max_weight: est.max_weight,
                },
            )?;
            let mut m = RunManifest::new(
                command,
                model.config_hash.clone(),
                Some(seed),
                start.elapsed().as_secs_f64(),
                vec![out.display().to_string(), strata_path.display().to_string()],
            );
            m.notes = vec![format!("n_max={n_max}")];
            m.write_next_to(&out)?;
            Ok(0)
        }
        Cmd::Entropy { config, field, out } => {
            let model = Model::load(&config)?;
            let free = PropagatorKernel::build(&model.params, &model.grid)?;
            let a = read_field(&field, &model.grid)?;
            let ctx = EntropyContext::new(free, model.cutoff.clone(), model.params.phi0)?;
            let b = w_a(&ctx, &a, &EntropyOptions::default())?;
            write_json(&out, &b)?;
            finish(&out, command, &model, None, start)
        }
        Cmd::Partition { config, samples, seed, xi, out } => {
            let model = Model::load(&config)?;
            let (ctx, cov) = hs_setup(&model)?;
            let z = partition_mc(&ctx, &cov, samples, seed)?;
            let b = bound_report(&model, xi)?;
            #[derive(Serialize)]
            struct Out {
                #[serde(flatten)]
                z: bose_kms::hs::PartitionEstimate,
                #[serde(flatten)]
                bound: BoundReport,
                inside_interval: bool,
            }
            let inside = z.z > b.interval_lo && z.z < b.interval_hi;
            write_json(&out, &Out { z, bound: b, inside_interval: inside })?;
            finish(&out, command, &model, Some(seed), start)
        }
        Cmd::Twopoint { config, f, h, samples, seed, xi, out } => {
            let model = Model::load(&config)?;
            let fv = read_sites(&f, &model.grid)?;
            let hv = read_sites(&h, &model.grid)?;
            let (ctx, cov) = hs_setup(&model)?;
            let s = interacting_two_point_mc(&ctx, &cov, &fv, &hv, samples, seed)?;
            #[derive(Serialize)]
            struct Out {
                #[serde(flatten)]
                s: bose_kms::hs::TwoPointEstimate,
                #[serde(flatten)]
                bound: BoundReport,
            }
            write_json(&out, &Out { s, bound: bound_report(&model, xi)? })?;
            finish(&out, command, &model, Some(seed), start)
        }
        Cmd::Region { config, sweep, g_norm, out } => {
            let model = Model::load(&config)?;
            let which = match g_norm {
                NormArg::L1 => GNorm::L1,
                NormArg::L2 => GNorm::L2,
                NormArg::Sup => GNorm::Sup,
            };
            let rows = region_sweep(&model, &sweep, which)?;
            write_csv(&out, &REGION_HEADER, &rows)?;
            let note = format!("g_norm={}", format!("{which:?}").to_lowercase());
            finish_with(&out, command, &model, None, start, vec![note])
        }
        Cmd::Selftest { quick } => {
            let checks = if quick { selftest::quick() } else { selftest::full() };
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.pass);
            }
            println!("{} checks, {} failed", checks.len(), failed);
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

fn hs_setup(model: &Model) -> Result<(EntropyContext, GaussianCovariance)> {
    let free = PropagatorKernel::build(&model.params, &model.grid)?;
    let ctx = EntropyContext::new(free, model.cutoff.clone(), model.params.phi0)?;
    let cov = GaussianCovariance::new(&model.grid, &model.potential, model.params.coupling)?;
    Ok((ctx, cov))
}

#[derive(Serialize)]
struct BoundReport {
    c_tilde: f64,
    e_bound: f64,
    e_convergent: bool,
    interval_lo: f64,
    interval_hi: f64,
    /// The E-interval is the φ₀ = 0 statement.
    bound_applies: bool,
    xi: f64,
}

fn bound_report(model: &Model, xi: f64) -> Result<BoundReport> {
    let dim = model.grid.dim();
    let nm = norms(&model.params, &model.grid, &model.potential, &model.cutoff)?;
    let ct = estimate_ctilde(&model.params, dim)?;
    // the coupling scales v, hence √v(0)
    let v0 = nm.v0 * model.params.coupling;
    let e = e_bound(ct.c_tilde, model.params.beta, v0, nm.g_l1, xi, dim)?;
    let (lo, hi) = partition_interval(e.e);
    Ok(BoundReport {
        c_tilde: ct.c_tilde,
        e_bound: e.e,
        e_convergent: e.convergent,
        interval_lo: lo,
        interval_hi: hi,
        bound_applies: model.params.phi0 == 0.0,
        xi,
    })
}

const REGION_HEADER: [&str; 15] = [
    "beta",
    "phi0",
    "v0",
    "g_l1",
    "g_norm",
    "vtilde_gg",
    "epsilon",
    "c_tilde",
    "dim",
    "r",
    "margin",
    "verdict",
    "gamma",
    "intro_margin",
    "intro_verdict",
];

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Convergent => "convergent",
        Verdict::NotGuaranteed => "not-guaranteed",
    }
}

/// `beta=a:b:n,phi0=c:d:m`; a missing axis stays at the config value.
fn parse_sweep(spec: &str, beta: f64, phi0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut betas = vec![beta];
    let mut phis = vec![phi0];
    for part in spec.split(',').filter(|s| !s.trim().is_empty()) {
        let (name, range) =
            part.split_once('=').ok_or_else(|| KmsError::Parse(format!("sweep term '{part}' needs name=a:b:n")))?;
        let f: Vec<&str> = range.split(':').collect();
        let bad = || KmsError::Parse(format!("sweep range '{range}' must be a:b:n"));
        if f.len() != 3 {
            return Err(bad());
        }
        let a: f64 = f[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = f[1].trim().parse().map_err(|_| bad())?;
        let n: usize = f[2].trim().parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        let vals: Vec<f64> =
            (0..n).map(|i| if n == 1 { a } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect();
        match name.trim() {
            "beta" => betas = vals,
            "phi0" => phis = vals,
            other => return Err(KmsError::Parse(format!("unknown sweep axis '{other}'"))),
        }
    }
    Ok((betas, phis))
}

fn region_sweep(model: &Model, spec: &str, which: GNorm) -> Result<Vec<Vec<String>>> {
    let (betas, phis) = parse_sweep(spec, model.params.beta, model.params.phi0)?;
    let dim = model.grid.dim();
    let mut rows = Vec::with_capacity(betas.len() * phis.len());
    for &beta in &betas {
        let params = model.params.with_beta(beta);
        params.validate()?;
        let grid = bose_kms::model::GridSpec::new(model.grid.box_length.clone(), model.grid.n_sites.clone(), model.grid.n_time, beta)?;
        let nm = norms(&params, &grid, &model.potential, &model.cutoff)?;
        let ct = estimate_ctilde(&params, dim)?.c_tilde;
        for &phi0 in &phis {
            let p = region(RegionInputs {
                beta,
                phi0,
                v0: nm.v0 * params.coupling,
                g_l1: nm.g_l1,
                g_norm: model.cutoff.g_norm(&grid, which),
                vtilde_gg: nm.vtilde_gg * params.coupling,
                epsilon: params.epsilon,
                c_tilde: ct,
                dim,
            })?;
            rows.push(vec![
                fmt(p.beta),
                fmt(p.phi0),
                fmt(p.v0),
                fmt(p.g_l1),
                fmt(p.g_norm),
                fmt(p.vtilde_gg),
                fmt(p.epsilon),
                fmt(p.c_tilde),
                p.dim.to_string(),
                fmt(p.r),
                fmt(p.margin),
                verdict_str(p.verdict).into(),
                fmt(p.gamma),
                fmt(p.intro_margin),
                verdict_str(p.intro_verdict).into(),
            ]);
        }
    }
    Ok(rows)
}
