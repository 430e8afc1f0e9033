//! Empirical checks of the estimator error bounds on explicit kernels.
//!
//! Every check compares against dense oracles (SVD, eigendecomposition,
//! fine-grid quadrature) rather than the estimator code paths, and reports
//! the smallest slack `rhs − lhs` seen over its trials.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::estimators::{concentration_constant, d_from_lipschitz, ell_bound, expected_estimate_oracle};
use crate::function_space::Grid;
use crate::function_space::Grid1D;
use crate::gp::{kernel_op_norm, ProbeRole, ProbeSampler, SECovariance};
use crate::linalg::symmetric_eigenvalues_desc;
use crate::operators::{builtin_kernel, BuiltinKernel, KernelFn, KernelIntegralOperator, LinearOperator};
use crate::{Error, Result};

/// Absolute slack granted to every inequality.
pub const ABS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    /// Trials where the inequality failed after tolerance.
    pub violations: usize,
    /// Smallest `rhs − lhs` over all trials; negative on a violation.
    pub worst_margin: f64,
    pub parameters: BTreeMap<String, f64>,
}

impl CheckReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            trials: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            parameters: BTreeMap::new(),
        }
    }

    /// Records one trial of `lhs ≤ rhs`.
    fn record(&mut self, lhs: f64, rhs: f64) {
        self.trials += 1;
        let margin = rhs - lhs;
        if !(margin >= 0.0) {
            self.violations += 1;
        }
        self.worst_margin = self.worst_margin.min(margin);
    }

    fn param(mut self, key: &str, value: f64) -> Self {
        self.parameters.insert(key.to_string(), value);
        self
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.trials > 0
    }
}

fn require_psd(op: &KernelIntegralOperator) -> Result<()> {
    let r = op.psd_report();
    if r.is_psd() {
        Ok(())
    } else {
        Err(Error::NotPositiveSemidefinite { min: r.min_eigenvalue, max: r.max_eigenvalue })
    }
}

/// `s(x, y) = ∫ f(z, x) f(z, y) dz`, the kernel of `F*F`, by quadrature on
/// the operator's grid. Symmetric and PSD for any real `f`.
pub fn gram_surrogate(op: &KernelIntegralOperator) -> Result<KernelIntegralOperator> {
    let line = op.grid().as_line().ok_or_else(|| Error::invalid("surrogate needs a 1D grid"))?;
    let z: Vec<f64> = line.nodes().to_vec();
    let w: Vec<f64> = line.weights().to_vec();
    let f = op.kernel().clone();
    let kernel: KernelFn = Arc::new(move |x, y| z.iter().zip(&w).map(|(&zi, &wi)| wi * f(zi, x) * f(zi, y)).sum());
    KernelIntegralOperator::new(op.grid().clone(), kernel)
}

/// `(Σ_{i>k} σ_i²)^{1/2} ≤ tr(f)/√k` for `k = 1..=k_max`.
pub fn check_rank_k_bound(op: &KernelIntegralOperator, k_max: usize) -> Result<CheckReport> {
    require_psd(op)?;
    let sv = op.singular_values();
    let tr = op.trace();
    let mut report = CheckReport::new("rank_k_bound");
    for k in 1..=k_max.min(sv.len()) {
        let tail = sv[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
        report.record(tail, tr / (k as f64).sqrt() + ABS_TOL);
    }
    Ok(report.param("trace", tr).param("k_max", k_max as f64))
}

/// `tr(W) − tr(V)‖K‖_op` for `W(s, t) = ∫ K(s, z) V(z, t) dz`, given node
/// values of both kernels and the quadrature weights.
pub fn composition_gap(k: &DMatrix<f64>, v: &DMatrix<f64>, w: &[f64]) -> (f64, f64) {
    let n = w.len();
    let mut tr_w = 0.0;
    for s in 0..n {
        let ws: f64 = (0..n).map(|z| w[z] * k[(s, z)] * v[(z, s)]).sum();
        tr_w += w[s] * ws;
    }
    let tr_v: f64 = (0..n).map(|i| w[i] * v[(i, i)]).sum();
    let k_op = symmetric_eigenvalues_desc(crate::linalg::weight_symmetric(k, w))[0];
    (tr_w, tr_v * k_op)
}

/// `tr(W) ≤ tr(V)‖K‖_op` for one pair of PSD kernels on a shared grid.
pub fn check_trace_composition(k: &KernelIntegralOperator, v: &KernelIntegralOperator) -> Result<CheckReport> {
    if **k.grid() != **v.grid() {
        return Err(Error::GridMismatch);
    }
    require_psd(k)?;
    require_psd(v)?;
    let (lhs, rhs) = composition_gap(k.kernel_matrix(), v.kernel_matrix(), k.grid().weights());
    let mut report = CheckReport::new("trace_composition");
    report.record(lhs, rhs + ABS_TOL);
    Ok(report)
}

/// Random PSD pairs `K = BBᵀ`, `V = CCᵀ` with Gaussian factors of random rank.
pub fn check_trace_composition_random(grid: &Grid, pairs: usize, seed: u64) -> Result<CheckReport> {
    let w = grid.weights();
    let n = w.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factor = |rng: &mut ChaCha8Rng| {
        let r = rng.random_range(1..=8);
        let b = DMatrix::<f64>::from_fn(n, r, |_, _| StandardNormal.sample(rng));
        &b * b.transpose()
    };
    let mut report = CheckReport::new("trace_composition_random");
    for _ in 0..pairs {
        let k = factor(&mut rng);
        let v = factor(&mut rng);
        let (lhs, rhs) = composition_gap(&k, &v, w);
        report.record(lhs, rhs * (1.0 + 1e-12) + ABS_TOL);
    }
    Ok(report.param("pairs", pairs as f64))
}

fn weighted_norm(w: &[f64], v: impl Iterator<Item = f64>) -> f64 {
    w.iter().zip(v).map(|(wi, x)| wi * x * x).sum::<f64>().sqrt()
}

/// `|h(g₁) − h(g₂)| ≤ 2‖f‖_op‖g₁ − g₂‖` with `h(g) = ‖2 F g‖` over GP pairs.
pub fn check_lipschitz_h(
    op: &KernelIntegralOperator,
    cov: SECovariance,
    trials: usize,
    seed: u64,
) -> Result<CheckReport> {
    let sampler = ProbeSampler::new(cov, op.grid().clone(), seed)?;
    let f_op = op.op_norm();
    let w = op.grid().weights();
    let mut report = CheckReport::new("lipschitz_h");
    let mut done = 0;
    while done < trials {
        let b = 128.min(trials - done);
        let g1 = sampler.sample_real(ProbeRole::Hutchinson, 2 * done, b);
        let g2 = sampler.sample_real(ProbeRole::Residual, 2 * done, b);
        let f1 = op.apply_real(&g1)?;
        let f2 = op.apply_real(&g2)?;
        for j in 0..b {
            let h1 = 2.0 * weighted_norm(w, f1.column(j).iter().map(|z| z.re));
            let h2 = 2.0 * weighted_norm(w, f2.column(j).iter().map(|z| z.re));
            let dist = weighted_norm(w, g1.column(j).iter().zip(g2.column(j).iter()).map(|(a, b)| a - b));
            report.record((h1 - h2).abs(), 2.0 * f_op * dist * (1.0 + 1e-6) + ABS_TOL);
        }
        done += b;
    }
    Ok(report.param("op_norm", f_op).param("ell", cov.ell))
}

/// Continuous Hanson–Wright tail for `φ(g) = ⟨g, F g⟩` at thresholds
/// `t = c·std(φ)` for each `c` in `t_multipliers`.
///
/// The mean is the analytic `∬ f K_SE`. A threshold fails when the empirical
/// exceedance frequency is above the (capped) bound by more than three
/// binomial standard errors.
pub fn check_hanson_wright_tail(
    op: &KernelIntegralOperator,
    cov: SECovariance,
    t_multipliers: &[f64],
    trials: usize,
    seed: u64,
) -> Result<CheckReport> {
    require_psd(op)?;
    if trials < 2 {
        return Err(Error::invalid("need at least two trials"));
    }
    let sampler = ProbeSampler::new(cov, op.grid().clone(), seed)?;
    let mean = expected_estimate_oracle(op, &cov)?;
    let mut phi = Vec::with_capacity(trials);
    while phi.len() < trials {
        let b = 256.min(trials - phi.len());
        let g = sampler.sample_real(ProbeRole::Hutchinson, phi.len(), b);
        phi.extend(op.quadratic_forms_real(&g)?.into_iter().map(|z| z.re));
    }
    let n = trials as f64;
    let sample_mean = phi.iter().sum::<f64>() / n;
    let std = (phi.iter().map(|x| (x - sample_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let k_op = kernel_op_norm(&cov, op.grid())?;
    let (f_l2, f_op) = (op.hs_norm(), op.op_norm());
    let c = concentration_constant(k_op);
    let mut report = CheckReport::new("hanson_wright_tail");
    let mut c_empirical: f64 = 0.0;
    for &mult in t_multipliers {
        let t = mult * std;
        let x = (t * t / (f_l2 * f_l2 * k_op)).min(t / f_op);
        let bound = (27.0 * (-x / c).exp()).min(1.0);
        let freq = phi.iter().filter(|p| (*p - mean).abs() >= t).count() as f64 / n;
        let se = (bound * (1.0 - bound) / n).sqrt();
        report.record(freq, bound + 3.0 * se);
        if freq > 0.0 {
            // smallest C with 27 exp(−x/C) ≥ freq
            c_empirical = c_empirical.max(x / (27.0 / freq).ln());
        }
    }
    Ok(report
        .param("mean", mean)
        .param("std", std)
        .param("C", c)
        .param("C_empirical_min", c_empirical)
        .param("kernel_op_norm", k_op)
        .param("ell", cov.ell))
}

/// `max |∂f/∂y|` by central differences on an `n × n` grid over `[a, b]²`.
pub fn numerical_lipschitz(kernel: &KernelFn, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / (n - 1) as f64;
    let delta = 1e-5 * (b - a);
    let mut best: f64 = 0.0;
    for i in 0..n {
        let x = a + i as f64 * h;
        for j in 0..n {
            let y = (a + j as f64 * h).clamp(a + delta, b - delta);
            best = best.max(((kernel(x, y + delta) - kernel(x, y - delta)) / (2.0 * delta)).abs());
        }
    }
    best
}

/// `∬ f(x, y) K_SE(x, y)` by trapezoid quadrature on `n` nodes of `[a, b]`,
/// skipping pairs farther apart than `12ℓ` where `K_SE` is below `e⁻⁷²`.
pub fn banded_expected_estimate(kernel: &KernelFn, a: f64, b: f64, n: usize, cov: &SECovariance) -> Result<f64> {
    let line = Grid1D::uniform(a, b, n)?;
    let (x, w) = (line.nodes(), line.weights());
    let band = (12.0 * cov.ell / line.spacing()).ceil() as usize;
    let mut total = 0.0;
    for i in 0..n {
        let lo = i.saturating_sub(band);
        let hi = (i + band).min(n - 1);
        let row: f64 = (lo..=hi).map(|j| w[j] * kernel(x[i], x[j]) * cov.eval_1d(x[i] - x[j])).sum();
        total += w[i] * row;
    }
    Ok(total)
}

/// `|E[H_m(f)] − tr(f)| < ε` at the length-scale prescribed by the bound,
/// evaluated by quadrature with spacing at most `ℓ/4`.
pub fn check_expectation_bound(op: &KernelIntegralOperator, eps: f64, lipschitz_alpha: f64) -> Result<CheckReport> {
    let line = op.grid().as_line().ok_or_else(|| Error::invalid("expectation check needs a 1D grid"))?;
    let (a, b) = (line.a(), line.b());
    let width = b - a;
    let f_inf = op.sup_norm();
    let d = d_from_lipschitz(eps, width, lipschitz_alpha);
    let ell = ell_bound(eps, f_inf, width, d)?;
    let n = ((4.0 * width / ell).ceil() as usize + 1).max(line.len());
    let cov = SECovariance::new(ell, 1)?;
    let kernel = op.kernel();
    let expected = banded_expected_estimate(kernel, a, b, n, &cov)?;
    let fine = Grid1D::uniform(a, b, n)?;
    let exact: f64 = fine.nodes().iter().zip(fine.weights()).map(|(&x, w)| w * kernel(x, x)).sum();
    let mut report = CheckReport::new("expectation_bound");
    report.record((expected - exact).abs(), eps);
    Ok(report
        .param("eps", eps)
        .param("alpha", lipschitz_alpha)
        .param("ell", ell)
        .param("nodes", n as f64)
        .param("bias", expected - exact))
}

/// Sizes for [`default_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub nodes: usize,
    pub k_max: usize,
    pub composition_pairs: usize,
    pub lipschitz_pairs: usize,
    pub tail_trials: usize,
    pub ell: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            nodes: 200,
            k_max: 50,
            composition_pairs: 200,
            lipschitz_pairs: 1000,
            tail_trials: 5000,
            ell: 0.05,
            eps: 0.1,
            seed: 0,
        }
    }
}

/// Runs every check on the builtin kernels.
///
/// The Helmholtz-like kernel is not PSD, so the PSD-only checks use its Gram
/// surrogate `F*F` in its place.
pub fn default_suite(cfg: &SuiteConfig) -> Result<Vec<CheckReport>> {
    let sinc = builtin_kernel(BuiltinKernel::SincMixture, cfg.nodes)?;
    let helm = builtin_kernel(BuiltinKernel::HelmholtzLike, cfg.nodes)?;
    let surrogate = gram_surrogate(&helm)?;
    let cov = SECovariance::new(cfg.ell, 1)?;
    let named = |mut r: CheckReport, suffix: &str| {
        r.name = format!("{}/{suffix}", r.name);
        r
    };

    let mut out = vec![
        named(check_rank_k_bound(&sinc, cfg.k_max)?, "sinc_mixture"),
        named(check_rank_k_bound(&surrogate, cfg.k_max)?, "helmholtz_like_gram"),
    ];

    let se_kernel: KernelFn = {
        let c = cov;
        Arc::new(move |x, y| c.eval_1d(x - y))
    };
    let k_se = KernelIntegralOperator::new(sinc.grid().clone(), se_kernel)?;
    out.push(named(check_trace_composition(&k_se, &sinc)?, "se_sinc_mixture"));
    out.push(check_trace_composition_random(sinc.grid(), cfg.composition_pairs, cfg.seed)?);

    out.push(named(check_lipschitz_h(&helm, cov, cfg.lipschitz_pairs, cfg.seed)?, "helmholtz_like"));

    let t_grid: Vec<f64> = (0..=12).map(|i| 0.1 * 100f64.powf(i as f64 / 12.0)).collect();
    out.push(named(check_hanson_wright_tail(&sinc, cov, &t_grid, cfg.tail_trials, cfg.seed)?, "sinc_mixture"));

    let alpha = 2.0 * numerical_lipschitz(sinc.kernel(), -1.0, 1.0, 201);
    out.push(named(check_expectation_bound(&sinc, cfg.eps, alpha)?, "sinc_mixture"));
    Ok(out)
}
