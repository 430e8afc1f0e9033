//! One function per subcommand: load, validate, compute, write.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use optrace::dos::{
    dos_estimate_with, dos_reference_free_particle, dos_sampler, rational_kernel, smoothed_free_particle, DosSettings,
};
use optrace::estimators::{estimate, expected_estimate_oracle, Method};
use optrace::function_space::Grid;
use optrace::gp::{ProbeRole, ProbeSampler, SECovariance};
use optrace::operators::{builtin_kernel, LinearOperator, Schrodinger1D};
use optrace::photonics::{
    dense_intensity, mean_field_intensity_with, CrossSection, HelmholtzPML2D, IntensityOperator, PhotonicsConfig, Shape,
};
use optrace::validation::{default_suite, SuiteConfig};
use optrace::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, DosCliConfig, PhotonicsCliConfig, ToyConfig};
use crate::output::{line_plot, matrix_text, OutputDir, Series};
use crate::Common;

pub type RunResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

pub enum Outcome {
    Passed,
    Violations(usize),
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn seeds(base: u64, count: u64) -> impl Iterator<Item = u64> + Clone {
    (0..count).map(move |k| base.wrapping_add(k))
}

#[derive(Serialize)]
struct ToyRow {
    kernel: &'static str,
    method: &'static str,
    ell: f64,
    m: usize,
    seed: u64,
    estimate: f64,
    exact: f64,
    rel_error: f64,
    num_matvecs: usize,
}

#[derive(Serialize)]
struct ToySummaryRow {
    kernel: &'static str,
    method: &'static str,
    ell: f64,
    m: usize,
    mean_estimate: f64,
    mean_rel_error: f64,
}

#[derive(Serialize)]
struct ToyBiasRow {
    kernel: &'static str,
    ell: f64,
    expected: f64,
    exact: f64,
    bias: f64,
}

pub fn trace_toy(common: &Common, out: &Path) -> RunResult<Outcome> {
    let mut cfg: ToyConfig = config::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut dir = OutputDir::create(out)?;

    let mut rows = Vec::new();
    let mut bias = Vec::new();
    for &kernel in &cfg.kernels {
        let op = builtin_kernel(kernel, cfg.nodes)?;
        let exact = op.trace();
        for &ell in &cfg.ells {
            let cov = SECovariance::new(ell, 1)?;
            let base = ProbeSampler::new(cov, op.grid().clone(), cfg.seed)?;
            let expected = expected_estimate_oracle(&op, &cov)?;
            bias.push(ToyBiasRow { kernel: kernel.name(), ell, expected, exact, bias: expected - exact });
            let tasks: Vec<(Method, usize, u64)> = cfg
                .methods
                .iter()
                .flat_map(|&method| {
                    cfg.ms.iter().flat_map(move |&m| seeds(cfg.seed, cfg.seeds).map(move |s| (method, m, s)))
                })
                .collect();
            let chunk = tasks
                .par_iter()
                .map(|&(method, m, seed)| {
                    let e = estimate(&op, &base.with_seed(seed), m, method)?;
                    Ok(ToyRow {
                        kernel: kernel.name(),
                        method: method.name(),
                        ell,
                        m,
                        seed,
                        estimate: e.value,
                        exact,
                        rel_error: (e.value - exact).abs() / exact.abs(),
                        num_matvecs: e.num_matvecs,
                    })
                })
                .collect::<optrace::Result<Vec<_>>>()?;
            rows.extend(chunk);
        }
        eprintln!("trace-toy: {} done", kernel.name());
    }

    let mut groups: BTreeMap<(usize, usize, usize, usize), Vec<&ToyRow>> = BTreeMap::new();
    for r in &rows {
        let ki = cfg.kernels.iter().position(|k| k.name() == r.kernel).unwrap_or(0);
        let mi = cfg.methods.iter().position(|m| m.name() == r.method).unwrap_or(0);
        let li = cfg.ells.iter().position(|&l| l == r.ell).unwrap_or(0);
        let ni = cfg.ms.iter().position(|&m| m == r.m).unwrap_or(0);
        groups.entry((ki, mi, li, ni)).or_default().push(r);
    }
    let summary: Vec<ToySummaryRow> = groups
        .values()
        .map(|g| ToySummaryRow {
            kernel: g[0].kernel,
            method: g[0].method,
            ell: g[0].ell,
            m: g[0].m,
            mean_estimate: mean(&g.iter().map(|r| r.estimate).collect::<Vec<_>>()),
            mean_rel_error: mean(&g.iter().map(|r| r.rel_error).collect::<Vec<_>>()),
        })
        .collect();

    for &kernel in &cfg.kernels {
        let mut series = Vec::new();
        for &method in &cfg.methods {
            for &ell in &cfg.ells {
                let points = summary
                    .iter()
                    .filter(|r| r.kernel == kernel.name() && r.method == method.name() && r.ell == ell)
                    .map(|r| (r.m as f64, r.mean_rel_error))
                    .collect();
                series.push(Series { name: format!("{} ℓ={ell}", method.name()), points });
            }
        }
        let title = format!("{}: mean relative error", kernel.name());
        dir.write_text(
            &format!("trace_toy_error_{}.svg", kernel.name()),
            &line_plot(&title, "m", "relative error", &series, true, true),
        )?;
    }
    let bias_series: Vec<Series> = cfg
        .kernels
        .iter()
        .map(|k| Series {
            name: k.name().into(),
            points: bias.iter().filter(|b| b.kernel == k.name()).map(|b| (b.ell, b.bias.abs())).collect(),
        })
        .collect();
    dir.write_text(
        "trace_toy_bias.svg",
        &line_plot("|E[estimate] − tr F|", "ℓ", "absolute bias", &bias_series, true, true),
    )?;

    dir.write_csv("trace_toy.csv", &rows)?;
    dir.write_csv("trace_toy_summary.csv", &summary)?;
    dir.write_csv("trace_toy_bias.csv", &bias)?;
    for r in summary.iter().filter(|r| r.m == *cfg.ms.iter().max().unwrap_or(&0)) {
        println!(
            "{:<15} {:<11} ell={:<6} m={:<5} mean rel error {:.3e}",
            r.kernel, r.method, r.ell, r.m, r.mean_rel_error
        );
    }
    dir.finish("trace-toy", cfg.seed, &cfg)?;
    Ok(Outcome::Passed)
}

#[derive(Serialize)]
struct DosRow {
    order: usize,
    sigma: f64,
    m: usize,
    seed: u64,
    lambda: f64,
    estimate: f64,
    std_error: f64,
    reference: f64,
    smoothed_reference: f64,
    error: f64,
}

#[derive(Serialize)]
struct CurveRow {
    lambda: f64,
    rho: f64,
    std_error: f64,
}

pub fn dos(common: &Common, out: &Path) -> RunResult<Outcome> {
    let mut cfg: DosCliConfig = config::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut dir = OutputDir::create(out)?;

    let disc = Arc::new(Schrodinger1D::new(cfg.l, cfg.n, cfg.bc, cfg.potential.build()?)?);
    let base = dos_sampler(&disc, cfg.ell, cfg.seed)?;
    let free = cfg.potential.is_free();
    let reference = if free { dos_reference_free_particle(cfg.lambda).unwrap_or(f64::NAN) } else { f64::NAN };

    let point = |order: usize, sigma: f64, m: usize, seed: u64| -> optrace::Result<DosRow> {
        let settings = DosSettings { sigma, order, m, ell: cfg.ell, method: cfg.method, seed };
        let r = dos_estimate_with(&disc, &base.with_seed(seed), &[cfg.lambda], &settings)?;
        let smoothed =
            if free { smoothed_free_particle(&rational_kernel(order)?, cfg.lambda, sigma) } else { f64::NAN };
        Ok(DosRow {
            order,
            sigma,
            m,
            seed,
            lambda: cfg.lambda,
            estimate: r.rho[0],
            std_error: r.std_error[0],
            reference,
            smoothed_reference: smoothed,
            error: (r.rho[0] - reference).abs(),
        })
    };

    let tasks: Vec<(usize, f64, u64)> = cfg
        .orders
        .iter()
        .flat_map(|&k| cfg.sigmas.iter().flat_map(move |&s| seeds(cfg.seed, cfg.seeds).map(move |seed| (k, s, seed))))
        .collect();
    let smoothing =
        tasks.par_iter().map(|&(k, s, seed)| point(k, s, cfg.m, seed)).collect::<optrace::Result<Vec<_>>>()?;
    eprintln!("dos: smoothing sweep done");

    let tasks: Vec<(usize, usize, u64)> = cfg
        .orders
        .iter()
        .flat_map(|&k| {
            cfg.sample_ms.iter().flat_map(move |&m| seeds(cfg.seed, cfg.seeds).map(move |seed| (k, m, seed)))
        })
        .collect();
    let samples = tasks
        .par_iter()
        .map(|&(k, m, seed)| point(k, cfg.sample_sigma, m, seed))
        .collect::<optrace::Result<Vec<_>>>()?;
    eprintln!("dos: sample sweep done");

    let averaged = |rows: &[DosRow], order: usize, x: &dyn Fn(&DosRow) -> f64| -> Vec<(f64, f64)> {
        let mut by_x: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.order == order) {
            by_x.entry(x(r).to_bits()).or_insert_with(|| (x(r), Vec::new())).1.push(r.error);
        }
        by_x.into_values().map(|(xv, errs)| (xv, mean(&errs))).collect()
    };
    if free {
        let series: Vec<Series> = cfg
            .orders
            .iter()
            .map(|&k| Series { name: format!("K={k}"), points: averaged(&smoothing, k, &|r| r.sigma) })
            .collect();
        dir.write_text(
            "dos_smoothing.svg",
            &line_plot("DOS error against smoothing width", "σ", "|ρ̂ − ρ|", &series, true, true),
        )?;
        let series: Vec<Series> = cfg
            .orders
            .iter()
            .map(|&k| Series { name: format!("K={k}"), points: averaged(&samples, k, &|r| r.m as f64) })
            .collect();
        dir.write_text(
            "dos_samples.svg",
            &line_plot("DOS error against probe count", "m", "|ρ̂ − ρ|", &series, true, true),
        )?;
    }
    dir.write_csv("dos_smoothing.csv", &smoothing)?;
    dir.write_csv("dos_samples.csv", &samples)?;

    if let Some(c) = &cfg.curve {
        let lambdas: Vec<f64> =
            (0..c.points).map(|i| c.from + (c.to - c.from) * i as f64 / (c.points - 1) as f64).collect();
        let settings =
            DosSettings { sigma: c.sigma, order: c.order, m: cfg.m, ell: cfg.ell, method: cfg.method, seed: cfg.seed };
        let r = dos_estimate_with(&disc, &base, &lambdas, &settings)?;
        let rows: Vec<CurveRow> = (0..lambdas.len())
            .map(|i| CurveRow { lambda: r.lambdas[i], rho: r.rho[i], std_error: r.std_error[i] })
            .collect();
        let series =
            [Series { name: format!("K={}", c.order), points: rows.iter().map(|r| (r.lambda, r.rho)).collect() }];
        dir.write_text("dos_curve.svg", &line_plot("Smoothed density of states", "λ", "ρ", &series, false, false))?;
        dir.write_csv("dos_curve.csv", &rows)?;
        eprintln!("dos: curve done");
    }

    let smallest = cfg.sigmas.iter().copied().fold(f64::INFINITY, f64::min);
    for &k in &cfg.orders {
        let at: Vec<&DosRow> = smoothing.iter().filter(|r| r.order == k && r.sigma == smallest).collect();
        let rho = mean(&at.iter().map(|r| r.estimate).collect::<Vec<_>>());
        if free {
            let err = mean(&at.iter().map(|r| r.error).collect::<Vec<_>>());
            println!("K={k:<2} sigma={smallest:<6} rho {rho:.6} mean |error| {err:.3e}");
        } else {
            println!("K={k:<2} sigma={smallest:<6} rho {rho:.6}");
        }
    }
    dir.finish("dos", cfg.seed, &cfg)?;
    Ok(Outcome::Passed)
}

#[derive(Serialize)]
struct PhotonicsRow {
    shape: &'static str,
    omega: f64,
    m: usize,
    ell: f64,
    seed: u64,
    estimate: f64,
}

#[derive(Serialize)]
struct SpectrumRow {
    omega: f64,
    k: usize,
    eigenvalue: f64,
}

#[derive(Serialize)]
struct ConvergenceRow {
    omega: f64,
    m: usize,
    seed: u64,
    estimate: f64,
    exact: f64,
    rel_error: f64,
}

fn pde_config(cfg: &PhotonicsCliConfig, shape: Shape, omega: f64, n: usize) -> optrace::Result<PhotonicsConfig> {
    Ok(PhotonicsConfig {
        cross_section: CrossSection::new(shape, cfg.scale)?,
        omega,
        n,
        pml_thickness: cfg.pml_thickness,
        pml_strength: cfg.pml_strength,
        ..PhotonicsConfig::default()
    })
}

fn omega_label(omega: f64) -> String {
    format!("{}pi", omega / std::f64::consts::PI)
}

pub fn photonics(common: &Common, out: &Path) -> RunResult<Outcome> {
    let mut cfg: PhotonicsCliConfig = config::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut dir = OutputDir::create(out)?;

    let mut rows = Vec::new();
    for &shape in &cfg.shapes {
        for omega in cfg.omegas() {
            let pde = Arc::new(HelmholtzPML2D::new(pde_config(&cfg, shape, omega, cfg.n)?)?);
            let op = IntensityOperator::new(pde.clone());
            for seed in seeds(cfg.seed, cfg.seeds) {
                let r = mean_field_intensity_with(&op, cfg.m, cfg.ell, cfg.method, seed)?;
                println!("{:<24} omega={:<8} seed={seed:<3} <E> = {:.6}", shape.name(), omega_label(omega), r.value);
                rows.push(PhotonicsRow { shape: shape.name(), omega, m: cfg.m, ell: cfg.ell, seed, estimate: r.value });
            }
            write_snapshots(&mut dir, &cfg, &pde, shape, omega)?;
        }
    }
    dir.write_csv("photonics.csv", &rows)?;

    let diag = &cfg.diagnostic;
    let mut spectrum = Vec::new();
    let mut convergence = Vec::new();
    for &w in &diag.omega_over_pi {
        let omega = w * std::f64::consts::PI;
        let pde = Arc::new(HelmholtzPML2D::new(pde_config(&cfg, diag.shape, omega, diag.n)?)?);
        let dense = dense_intensity(&pde)?;
        let ev = dense.eigenvalues_desc();
        spectrum.extend(ev.iter().take(diag.count).enumerate().map(|(k, &e)| SpectrumRow {
            omega,
            k: k + 1,
            eigenvalue: e,
        }));
        let op = IntensityOperator::new(pde);
        let tasks: Vec<(usize, u64)> =
            diag.ms.iter().flat_map(|&m| seeds(cfg.seed, diag.seeds).map(move |s| (m, s))).collect();
        let chunk = tasks
            .par_iter()
            .map(|&(m, seed)| {
                let r = mean_field_intensity_with(&op, m, cfg.ell, cfg.method, seed)?;
                let e = r.estimate.value;
                Ok(ConvergenceRow {
                    omega,
                    m,
                    seed,
                    estimate: e,
                    exact: dense.trace,
                    rel_error: (e - dense.trace).abs() / dense.trace,
                })
            })
            .collect::<optrace::Result<Vec<_>>>()?;
        convergence.extend(chunk);
        eprintln!("photonics: diagnostic at omega={} done", omega_label(omega));
    }
    let omegas: Vec<f64> = diag.omega_over_pi.iter().map(|w| w * std::f64::consts::PI).collect();
    let series: Vec<Series> = omegas
        .iter()
        .map(|&o| Series {
            name: format!("ω={}", omega_label(o)),
            points: spectrum.iter().filter(|r| r.omega == o).map(|r| (r.k as f64, r.eigenvalue)).collect(),
        })
        .collect();
    dir.write_text(
        "spectrum.svg",
        &line_plot("Eigenvalues of the intensity operator", "k", "λ_k", &series, false, true),
    )?;
    let series: Vec<Series> = omegas
        .iter()
        .map(|&o| Series {
            name: format!("ω={}", omega_label(o)),
            points: diag
                .ms
                .iter()
                .map(|&m| {
                    let errs: Vec<f64> =
                        convergence.iter().filter(|r| r.omega == o && r.m == m).map(|r| r.rel_error).collect();
                    (m as f64, mean(&errs))
                })
                .collect(),
        })
        .collect();
    dir.write_text(
        "photonics_convergence.svg",
        &line_plot("Trace estimate error", "m", "relative error", &series, true, true),
    )?;
    dir.write_csv("spectrum.csv", &spectrum)?;
    dir.write_csv("photonics_convergence.csv", &convergence)?;
    dir.finish("photonics", cfg.seed, &cfg)?;
    Ok(Outcome::Passed)
}

/// Source `ξ g` for a GP draw `g`, and the resulting `|E|²`.
fn write_snapshots(
    dir: &mut OutputDir,
    cfg: &PhotonicsCliConfig,
    pde: &HelmholtzPML2D,
    shape: Shape,
    omega: f64,
) -> RunResult<()> {
    if cfg.snapshots == 0 {
        return Ok(());
    }
    let grid: &Arc<Grid> = pde.grid();
    let sampler = ProbeSampler::new(SECovariance::new(cfg.ell, 2)?, grid.clone(), cfg.seed)?;
    let xi = pde.permittivity().xi.real_values();
    for k in 0..cfg.snapshots {
        let g = sampler.sample_one(ProbeRole::Hutchinson, k);
        let source: Vec<f64> = g.iter().zip(&xi).map(|(g, x)| g * x).collect();
        let b: Vec<Complex64> = source.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        let intensity: Vec<f64> = pde.apply_solution(&b).iter().map(|z| z.norm_sqr()).collect();
        let stem = format!("snapshot_{}_{}_{k}", shape.name(), omega_label(omega));
        dir.write_text(&format!("{stem}_source.txt"), &matrix_text(&source, cfg.n, -1.0, 1.0))?;
        dir.write_text(&format!("{stem}_intensity.txt"), &matrix_text(&intensity, cfg.n, -1.0, 1.0))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ValidationRow<'a> {
    name: &'a str,
    trials: usize,
    violations: usize,
    worst_margin: f64,
    passed: bool,
}

pub fn validate(common: &Common, out: &Path) -> RunResult<Outcome> {
    let mut cfg: SuiteConfig = config::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    config::validate_suite(&cfg)?;
    let mut dir = OutputDir::create(out)?;
    let reports = default_suite(&cfg)?;
    let rows: Vec<ValidationRow> = reports
        .iter()
        .map(|r| ValidationRow {
            name: &r.name,
            trials: r.trials,
            violations: r.violations,
            worst_margin: r.worst_margin,
            passed: r.passed(),
        })
        .collect();
    for r in &rows {
        println!(
            "{} {:<36} {} / {} violations",
            if r.passed { "ok  " } else { "FAIL" },
            r.name,
            r.violations,
            r.trials
        );
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    dir.write_text("validation.json", &(serde_json::to_string_pretty(&reports)? + "\n"))?;
    dir.write_csv("validation.csv", &rows)?;
    dir.finish("validate", cfg.seed, &cfg)?;
    Ok(if failed == 0 { Outcome::Passed } else { Outcome::Violations(failed) })
}
