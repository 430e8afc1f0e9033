//! Density of states of 1D Schrödinger operators from smoothed resolvent
//! traces.
//!
//! The smoothed density at `λ` is `(1/2L) tr T(λ)` where `T` is the rational
//! filter of [`RationalFilteredResolvent`]; the kernel `g` has unit mass, so
//! the smoothed density tends to the true one as `σ → 0`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimators::{estimate, Method};
use crate::gp::{ProbeSampler, SECovariance};
use crate::operators::{BoundaryCondition, Potential, RationalFilteredResolvent, Schrodinger1D};
use crate::{Error, Result};

/// Largest supported kernel order; beyond it the Vandermonde system for the
/// residues is too ill-conditioned.
pub const MAX_ORDER: usize = 12;

/// `g(u) = −(1/π) Im Σ_j r_j/(u − p_j)` with poles on `Im z = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalKernel {
    pub order: usize,
    pub poles: Vec<Complex64>,
    pub residues: Vec<Complex64>,
}

/// Order-`K` kernel with poles equispaced over `[−1, 1] + i` (`i` for K = 1)
/// and residues solving `Σ_j r_j p_j^n = −δ_{n0}` for `n < K`.
pub fn rational_kernel(order: usize) -> Result<RationalKernel> {
    if order == 0 {
        return Err(Error::invalid("kernel order must be at least 1"));
    }
    if order > MAX_ORDER {
        return Err(Error::invalid(format!(
            "kernel order {order} exceeds {MAX_ORDER}; the residue system is too ill-conditioned, use a lower order"
        )));
    }
    let poles: Vec<Complex64> = if order == 1 {
        vec![Complex64::i()]
    } else {
        (0..order).map(|j| Complex64::new(-1.0 + 2.0 * j as f64 / (order - 1) as f64, 1.0)).collect()
    };
    let v = DMatrix::from_fn(order, order, |n, j| poles[j].powu(n as u32));
    let mut rhs = DVector::zeros(order);
    rhs[0] = Complex64::new(-1.0, 0.0);
    let residues = v.clone().lu().solve(&rhs).ok_or_else(|| Error::Singular("residue system".into()))?;
    let resid = (&v * &residues - &rhs).camax();
    if resid > 1e-10 {
        return Err(Error::Singular(format!("residue system residual {resid:e}")));
    }
    Ok(RationalKernel { order, poles, residues: residues.iter().copied().collect() })
}

impl RationalKernel {
    pub fn eval(&self, u: f64) -> f64 {
        let s: Complex64 = self.poles.iter().zip(&self.residues).map(|(p, r)| r / (Complex64::new(u, 0.0) - p)).sum();
        -s.im / PI
    }

    /// `Σ_j r_j p_j^n`; vanishes for `1 ≤ n < K` and is `−1` at `n = 0`.
    pub fn moment_condition(&self, n: u32) -> Complex64 {
        self.poles.iter().zip(&self.residues).map(|(p, r)| r * p.powu(n)).sum()
    }
}

/// Discretized Schrödinger problem for a density-of-states sweep.
#[derive(Debug, Clone)]
pub struct DosConfig {
    pub l: f64,
    pub n: usize,
    pub bc: BoundaryCondition,
    pub potential: Potential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosResult {
    pub lambdas: Vec<f64>,
    pub rho: Vec<f64>,
    /// Standard error of each `rho` entry.
    pub std_error: Vec<f64>,
    #[serde(rename = "K")]
    pub order: usize,
    pub sigma: f64,
    pub m: usize,
    pub ell: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub method: Method,
}

/// Estimation parameters for [`dos_estimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DosSettings {
    pub sigma: f64,
    pub order: usize,
    pub m: usize,
    pub ell: f64,
    pub method: Method,
    pub seed: u64,
}

/// Probe sampler for a DOS problem; reusable across σ, K and λ.
pub fn dos_sampler(disc: &Schrodinger1D, ell: f64, seed: u64) -> Result<ProbeSampler> {
    ProbeSampler::new(SECovariance::new(ell, 1)?, disc.grid().clone(), seed)
}

/// Smoothed DOS estimate at each `λ`, sharing one probe set across all points.
pub fn dos_estimate(config: &DosConfig, lambdas: &[f64], settings: &DosSettings) -> Result<DosResult> {
    let disc = Arc::new(Schrodinger1D::new(config.l, config.n, config.bc, config.potential.clone())?);
    let sampler = dos_sampler(&disc, settings.ell, settings.seed)?;
    dos_estimate_with(&disc, &sampler, lambdas, settings)
}

/// As [`dos_estimate`] with a prebuilt discretization and sampler.
pub fn dos_estimate_with(
    disc: &Arc<Schrodinger1D>,
    sampler: &ProbeSampler,
    lambdas: &[f64],
    settings: &DosSettings,
) -> Result<DosResult> {
    if settings.method == Method::Exact {
        return Err(Error::invalid("use exact_smoothed_dos for the dense reference"));
    }
    if lambdas.is_empty() || lambdas.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("need a non-empty, finite lambda grid"));
    }
    let kernel = rational_kernel(settings.order)?;
    let two_l = 2.0 * disc.half_width();
    let points: Vec<(f64, f64)> = lambdas
        .par_iter()
        .map(|&lambda| {
            let op =
                RationalFilteredResolvent::new(disc.clone(), lambda, settings.sigma, &kernel.poles, &kernel.residues)?;
            let e = estimate(&op, sampler, settings.m, settings.method)?;
            Ok((e.value / two_l, e.std_error / two_l))
        })
        .collect::<Result<Vec<_>>>()?;
    let rho: Vec<f64> = points.iter().map(|p| p.0).collect();
    if rho.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("density estimate is not finite"));
    }
    Ok(DosResult {
        lambdas: lambdas.to_vec(),
        rho,
        std_error: points.iter().map(|p| p.1).collect(),
        order: settings.order,
        sigma: settings.sigma,
        m: settings.m,
        ell: sampler.covariance().ell,
        l: disc.half_width(),
        n: disc.unknowns(),
        seed: sampler.seed(),
        method: settings.method,
    })
}

/// `(1/2L) Σ_k g((λ − λ_k)/σ)/σ` over the eigenvalues of `ℒ_h`.
pub fn exact_smoothed_dos(disc: &Schrodinger1D, kernel: &RationalKernel, lambda: f64, sigma: f64) -> f64 {
    spectral_smoothed_dos(&disc.eigenvalues(), 2.0 * disc.half_width(), kernel, lambda, sigma)
}

/// Smoothed DOS from a precomputed spectrum.
pub fn spectral_smoothed_dos(eigs: &[f64], two_l: f64, kernel: &RationalKernel, lambda: f64, sigma: f64) -> f64 {
    eigs.iter().map(|mu| kernel.eval((lambda - mu) / sigma) / sigma).sum::<f64>() / two_l
}

/// Free-particle density of states `1/(2π√λ)` as `L → ∞`.
pub fn dos_reference_free_particle(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("free-particle density needs lambda > 0, got {lambda}")));
    }
    Ok(1.0 / (2.0 * PI * lambda.sqrt()))
}

/// `∫ g(u) ρ(λ − σu) du` for the free-particle density, via `λ' = s²`.
pub fn smoothed_free_particle(kernel: &RationalKernel, lambda: f64, sigma: f64) -> f64 {
    // ∫_0^∞ g((λ − s²)/σ)/(πσ) ds, split around the peak at s = √λ
    let f = |s: f64| kernel.eval((lambda - s * s) / sigma) / (PI * sigma);
    let s0 = lambda.max(0.0).sqrt();
    let width = sigma / (2.0 * s0 + sigma.sqrt());
    let s_max = 100.0 * (lambda.abs() + sigma).sqrt().max(1.0);
    let lo = (s0 - 50.0 * width).max(0.0);
    let hi = s0 + 50.0 * width;
    let mut cuts = vec![0.0];
    if lo > 0.0 {
        cuts.push(lo);
    }
    cuts.push(hi);
    if s_max > hi {
        cuts.push(s_max);
    }
    cuts.windows(2).map(|w| adaptive_simpson(&f, w[0], w[1], 1e-13, 48)).sum()
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::hutchinson;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// `∫ u^n g(u) du` by Simpson on `[-R, R]` plus the analytic tail
    /// `2 a_{K} R^{n−K}/(K−n)` of the leading term `a_K u^{−(K+1)}`.
    fn moment(k: &RationalKernel, n: i32) -> f64 {
        let r = 1e4;
        let steps = 4_000_000;
        let h = 2.0 * r / steps as f64;
        let f = |u: f64| u.powi(n) * k.eval(u);
        let mut acc = f(-r) + f(r);
        for i in 1..steps {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(-r + i as f64 * h);
        }
        let body = acc * h / 3.0;
        // g(u) ≈ −(1/π) Σ_q Im(Σ_j r_j p_j^q)/u^{q+1}; only even integrands survive
        let tail: f64 = (k.order..k.order + 4)
            .map(|q| {
                let a = -k.moment_condition(q as u32).im / PI;
                let q = q as i32;
                if (n - q - 1).rem_euclid(2) == 0 {
                    2.0 * a * r.powi(n - q) / (q - n) as f64
                } else {
                    0.0
                }
            })
            .sum();
        body + tail
    }

    #[test]
    fn first_order_kernel_is_poisson() {
        let k = rational_kernel(1).unwrap();
        assert_eq!(k.poles, vec![c(0.0, 1.0)]);
        assert!((k.residues[0] - c(-1.0, 0.0)).norm() < 1e-15);
        for u in [-3.0, 0.0, 0.5, 10.0] {
            assert!((k.eval(u) - 1.0 / (PI * (1.0 + u * u))).abs() < 1e-15);
        }
    }

    #[test]
    fn second_and_fourth_order_residues() {
        let k2 = rational_kernel(2).unwrap();
        assert!((k2.residues[0] - c(-0.5, -0.5)).norm() < 1e-12);
        assert!((k2.residues[1] - c(-0.5, 0.5)).norm() < 1e-12);
        let k4 = rational_kernel(4).unwrap();
        let expected = [c(0.625, 0.625), c(-1.125, -3.375), c(-1.125, 3.375), c(0.625, -0.625)];
        for (r, e) in k4.residues.iter().zip(expected) {
            assert!((r - e).norm() < 1e-10, "{r} vs {e}");
        }
    }

    #[test]
    fn moment_conditions_hold_for_all_orders() {
        for order in 1..=MAX_ORDER {
            let k = rational_kernel(order).unwrap();
            assert!((k.moment_condition(0) + 1.0).norm() < 1e-10);
            for n in 1..order as u32 {
                assert!(k.moment_condition(n).norm() < 1e-10, "K={order}, n={n}");
            }
        }
    }

    #[test]
    fn orders_outside_range_are_rejected() {
        assert!(rational_kernel(0).is_err());
        assert!(rational_kernel(13).is_err());
    }

    #[test]
    fn kernels_have_unit_mass_and_vanishing_first_moment() {
        for order in [1, 2, 3, 4] {
            let k = rational_kernel(order).unwrap();
            let m0 = moment(&k, 0);
            assert!((m0 - 1.0).abs() < 1e-6, "K={order}: mass {m0}");
        }
        let k2 = rational_kernel(2).unwrap();
        assert!(moment(&k2, 1).abs() < 1e-6);
    }

    #[test]
    fn kernel_tail_decays_at_least_order_plus_one() {
        for order in 1..=4 {
            let k = rational_kernel(order).unwrap();
            // first power q ≥ K whose coefficient survives sets the slope −(q + 1)
            let q = (order..order + 4).find(|&q| k.moment_condition(q as u32).im.abs() > 1e-9).unwrap();
            // evaluation roundoff near 1e-16·Σ|r_j|/u bounds how far out the ratio is meaningful
            let (u1, u2) = (50.0, 500.0);
            let slope = (k.eval(u2).abs() / k.eval(u1).abs()).ln() / (u2 / u1).ln();
            assert!(slope <= -(order as f64 + 1.0) + 0.1, "K={order}: slope {slope}");
            assert!((slope + (q as f64 + 1.0)).abs() < 0.1, "K={order}: slope {slope}, q={q}");
        }
    }

    #[test]
    fn free_particle_reference_values() {
        assert!((dos_reference_free_particle(1.0).unwrap() - 0.159_154_943_1).abs() < 1e-10);
        assert!((dos_reference_free_particle(4.0).unwrap() - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!(dos_reference_free_particle(0.0).is_err());
        assert!(dos_reference_free_particle(-1.0).is_err());
    }

    #[test]
    fn eigenvalue_counting_matches_reference() {
        // Dirichlet eigenvalues in [1, 1.21) on [−L, L]: ΔN/(2L Δλ) ≈ (√1.21 − 1)/(π 0.21).
        // Counts come from Sylvester inertia: negative LDLᵀ pivots of ℒ_h − λ.
        let l = 1000.0;
        let disc = Schrodinger1D::new(l, 40_000, BoundaryCondition::Dirichlet, Potential::free()).unwrap();
        let h = disc.spacing();
        let below = |lambda: f64| {
            let (d, o) = (2.0 / (h * h) - lambda, -1.0 / (h * h));
            let mut pivot = d;
            let mut neg = usize::from(pivot < 0.0);
            for _ in 1..disc.unknowns() {
                pivot = d - o * o / pivot;
                neg += usize::from(pivot < 0.0);
            }
            neg
        };
        let count = (below(1.21) - below(1.0)) as f64;
        let rho = count / (2.0 * l * 0.21);
        let reference = (1.1 - 1.0) / (PI * 0.21);
        assert!((rho - reference).abs() < 0.03 * reference, "{rho} vs {reference}");
        assert!((rho - dos_reference_free_particle(1.1).unwrap()).abs() < 0.01);
    }

    #[test]
    fn smoothed_reference_approaches_pointwise_value() {
        let k = rational_kernel(2).unwrap();
        let exact = dos_reference_free_particle(1.0).unwrap();
        let e1 = (smoothed_free_particle(&k, 1.0, 0.2) - exact).abs();
        let e2 = (smoothed_free_particle(&k, 1.0, 0.1) - exact).abs();
        assert!(e2 < e1);
        let p = rational_kernel(1).unwrap();
        // Poisson mass check through a flat density: ∫ g = 1
        let flat = smoothed_free_particle(&p, 400.0, 0.01);
        assert!((flat - dos_reference_free_particle(400.0).unwrap()).abs() < 1e-4);
    }

    #[test]
    fn hutchinson_converges_to_dense_smoothed_dos() {
        let cfg = DosConfig { l: 3.0, n: 60, bc: BoundaryCondition::Dirichlet, potential: Potential::free() };
        let disc = Arc::new(Schrodinger1D::new(cfg.l, cfg.n, cfg.bc, cfg.potential.clone()).unwrap());
        let k = rational_kernel(2).unwrap();
        let (lambda, sigma) = (1.0, 0.5);
        let exact = exact_smoothed_dos(&disc, &k, lambda, sigma);
        let sampler = dos_sampler(&disc, 0.15, 17).unwrap();
        let op = RationalFilteredResolvent::new(disc.clone(), lambda, sigma, &k.poles, &k.residues).unwrap();
        let e = hutchinson(&op, &sampler, 2000).unwrap();
        let (rho, se) = (e.value / 6.0, e.std_error / 6.0);
        assert!((rho - exact).abs() < 3.0 * se + 0.03 * exact, "{rho} ± {se} vs {exact}");
    }

    #[test]
    fn sweep_is_smooth_and_positive_for_low_order() {
        let cfg = DosConfig { l: 10.0, n: 200, bc: BoundaryCondition::Periodic, potential: Potential::free() };
        let lambdas: Vec<f64> = (0..21).map(|i| 0.5 + 0.05 * i as f64).collect();
        let s = DosSettings { sigma: 0.4, order: 2, m: 60, ell: 0.2, method: Method::Hutchinson, seed: 3 };
        let r = dos_estimate(&cfg, &lambdas, &s).unwrap();
        assert!(r.rho.iter().all(|x| x.is_finite() && *x >= -1e-8));
        // σ = 0.4 filter: |dρ/dλ| stays well below ρ/σ; allow a factor 10 slack
        let max_rho = r.rho.iter().cloned().fold(0.0, f64::max);
        for w in r.rho.windows(2) {
            assert!((w[1] - w[0]).abs() < 10.0 * 0.05 * max_rho / 0.4);
        }
        let again = dos_estimate(&cfg, &lambdas, &s).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn exact_method_is_rejected_for_sweeps() {
        let cfg = DosConfig { l: 2.0, n: 20, bc: BoundaryCondition::Dirichlet, potential: Potential::free() };
        let s = DosSettings { sigma: 0.4, order: 2, m: 6, ell: 0.2, method: Method::Exact, seed: 0 };
        assert!(dos_estimate(&cfg, &[1.0], &s).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn low_order_kernels_are_positive(u in -50.0f64..50.0) {
            for order in [1, 2] {
                prop_assert!(rational_kernel(order).unwrap().eval(u) >= 0.0);
            }
        }
    }
}
