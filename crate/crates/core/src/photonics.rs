//! Mean-square field intensity in a dielectric tube driven by spatially
//! incoherent currents.
//!
//! The field solves `ΔE − ω²εE = iωb` on `[−1, 1]²` surrounded by a
//! complex-stretched absorbing collar with zero Dirichlet data on its outer
//! edge. With `A: b ↦ E` and `M` multiplication by the smoothed indicator
//! `ξ`, the traced operator is `H = (AM)* M (AM)` on the unit square, so
//! `⟨g, H g⟩ = ∬ ξ |A(ξ g)|²`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimators::{estimate, Method, TraceEstimate};
use crate::function_space::{Grid, Grid1D, Grid2D, GridFunction};
use crate::gp::{ProbeSampler, SECovariance};
use crate::linalg::{hermitian_eigenvalues_desc, BandLu, BandMatrix};
use crate::operators::LinearOperator;
use crate::{Error, Result};

pub const EPS_BACKGROUND: f64 = 1.0;
pub const EPS_DIELECTRIC: f64 = 12.0;

/// Nodes with `ξ` at or below this value are dropped from the dense path.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// Largest support handled by the dense oracle (one solve per node).
pub const DENSE_LIMIT: usize = 4000;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Disk,
    Quadrifolium,
    DiskWithAstroidCutout,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Disk, Shape::Quadrifolium, Shape::DiskWithAstroidCutout];

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Disk => "disk",
            Shape::Quadrifolium => "quadrifolium",
            Shape::DiskWithAstroidCutout => "disk_with_astroid_cutout",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::invalid(format!("unknown shape {s:?}")))
    }
}

/// A dielectric cross-section contained in the disk of radius `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub shape: Shape,
    pub scale: f64,
}

impl CrossSection {
    pub fn new(shape: Shape, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { shape, scale })
    }

    pub fn disk() -> Self {
        Self { shape: Shape::Disk, scale: 0.5 }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let r = x.hypot(y);
        match self.shape {
            Shape::Disk => r <= self.scale,
            // r ≤ s|cos 2θ| with cos 2θ = (x² − y²)/r²
            Shape::Quadrifolium => r * r * r <= self.scale * (x * x - y * y).abs(),
            Shape::DiskWithAstroidCutout => {
                let a = (0.5 * self.scale).powf(2.0 / 3.0);
                r <= self.scale && x.abs().powf(2.0 / 3.0) + y.abs().powf(2.0 / 3.0) > a
            }
        }
    }

    pub fn indicator(&self, x: f64, y: f64) -> f64 {
        if self.contains(x, y) {
            1.0
        } else {
            0.0
        }
    }
}

impl Default for CrossSection {
    fn default() -> Self {
        Self::disk()
    }
}

/// Normalized discrete Gaussian weights on offsets `−r..=r`, `r = ⌈8σ/h⌉`.
fn gaussian_taps(sigma: f64, h: f64) -> Vec<f64> {
    let r = (8.0 * sigma / h).ceil().max(1.0) as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|k| {
            let d = k as f64 * h;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn convolve_axis(values: &[f64], len: usize, stride: usize, count: usize, outer: usize, taps: &[f64]) -> Vec<f64> {
    // `count` lines of `len` samples at spacing `stride`; line k starts at k·outer
    let r = (taps.len() / 2) as i64;
    let mut out = vec![0.0; values.len()];
    for line in 0..count {
        let base = line * outer;
        for i in 0..len as i64 {
            let mut acc = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                let k = i + t as i64 - r;
                if k >= 0 && k < len as i64 {
                    acc += w * values[base + k as usize * stride];
                }
            }
            out[base + i as usize * stride] = acc;
        }
    }
    out
}

/// Discrete Gaussian convolution of the sampled shape indicator, clamped to
/// `[0, 1]`. The grid must be a uniform rectangle.
pub fn smoothed_indicator(shape: &CrossSection, grid: &Arc<Grid>, sigma_smooth: f64) -> Result<GridFunction> {
    if !(sigma_smooth.is_finite() && sigma_smooth > 0.0) {
        return Err(Error::invalid(format!("smoothing width must be positive, got {sigma_smooth}")));
    }
    let plane = grid.as_plane().ok_or_else(|| Error::invalid("smoothed indicator needs a 2D grid"))?;
    let (nx, ny) = (plane.nx(), plane.ny());
    let raw: Vec<f64> = (0..nx * ny)
        .map(|idx| {
            let (x, y) = plane.point(idx);
            shape.indicator(x, y)
        })
        .collect();
    // index i·ny + j: y lines are contiguous, x lines have stride ny
    let ty = gaussian_taps(sigma_smooth, plane.gy.spacing());
    let tx = gaussian_taps(sigma_smooth, plane.gx.spacing());
    let along_y = convolve_axis(&raw, ny, 1, nx, ny, &ty);
    let both = convolve_axis(&along_y, nx, ny, ny, 1, &tx);
    let clamped: Vec<f64> = both.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    GridFunction::from_real(grid.clone(), &clamped)
}

/// `ε = ε₁ + ξ (ε₂ − ε₁)` on the unit-square grid; the collar is background.
#[derive(Debug, Clone)]
pub struct PermittivityField {
    pub xi: GridFunction,
    pub eps: GridFunction,
    pub sigma_smooth: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl PermittivityField {
    pub fn new(shape: &CrossSection, grid: &Arc<Grid>, sigma_smooth: f64, eps1: f64, eps2: f64) -> Result<Self> {
        if !(eps1 > 0.0 && eps2 > 0.0) {
            return Err(Error::invalid("permittivities must be positive"));
        }
        let xi = smoothed_indicator(shape, grid, sigma_smooth)?;
        let eps: Vec<f64> = xi.real_values().iter().map(|x| eps1 + x * (eps2 - eps1)).collect();
        let eps = GridFunction::from_real(grid.clone(), &eps)?;
        Ok(Self { xi, eps, sigma_smooth, eps1, eps2 })
    }

    /// `∬ ξ`.
    pub fn area(&self) -> f64 {
        self.xi.grid().weights().iter().zip(self.xi.values().iter()).map(|(w, x)| w * x.re).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotonicsConfig {
    pub cross_section: CrossSection,
    pub omega: f64,
    /// Nodes per side on `[−1, 1]`.
    pub n: usize,
    pub pml_thickness: f64,
    pub pml_strength: f64,
    /// Gaussian smoothing width; `None` means half the grid spacing.
    pub sigma_smooth: Option<f64>,
    pub eps1: f64,
    pub eps2: f64,
}

impl Default for PhotonicsConfig {
    fn default() -> Self {
        Self {
            cross_section: CrossSection::disk(),
            omega: std::f64::consts::PI,
            n: 100,
            pml_thickness: 1.0,
            pml_strength: 1.0,
            sigma_smooth: None,
            eps1: EPS_BACKGROUND,
            eps2: EPS_DIELECTRIC,
        }
    }
}

/// Finite-difference Helmholtz problem with an absorbing collar and a cached
/// band LU factorization.
///
/// The collar holds `c = ⌈T/h⌉` cells, so its actual width is `c·h ≥ T`.
/// Unknowns are the interior nodes of the padded grid, ordered `a·side + b`.
#[derive(Debug)]
pub struct HelmholtzPML2D {
    config: PhotonicsConfig,
    grid: Arc<Grid>,
    permittivity: PermittivityField,
    h: f64,
    cells: usize,
    side: usize,
    /// Set once in `new`, right after assembly.
    lu: Option<BandLu>,
}

impl HelmholtzPML2D {
    pub fn new(config: PhotonicsConfig) -> Result<Self> {
        if config.n < 3 {
            return Err(Error::invalid(format!("need at least 3 nodes per side, got {}", config.n)));
        }
        if !(config.omega.is_finite() && config.omega > 0.0) {
            return Err(Error::invalid(format!("omega must be positive, got {}", config.omega)));
        }
        if !(config.pml_thickness > 0.0 && config.pml_strength >= 0.0) {
            return Err(Error::invalid("collar thickness must be positive and strength non-negative"));
        }
        let line = Grid1D::uniform(-1.0, 1.0, config.n)?;
        let h = line.spacing();
        let grid = Arc::new(Grid::from_plane(Grid2D::new(line.clone(), line)));
        let sigma_smooth = config.sigma_smooth.unwrap_or(0.5 * h);
        let permittivity =
            PermittivityField::new(&config.cross_section, &grid, sigma_smooth, config.eps1, config.eps2)?;
        let cells = (config.pml_thickness / h - 1e-9).ceil() as usize;
        let side = config.n + 2 * cells - 2;
        let mut me = Self { config, grid, permittivity, h, cells, side, lu: None };
        me.lu = Some(me.assemble().factor()?);
        Ok(me)
    }

    fn lu(&self) -> &BandLu {
        self.lu.as_ref().expect("factored in new")
    }

    pub fn config(&self) -> &PhotonicsConfig {
        &self.config
    }

    /// The unit-square grid carrying sources, `ξ` and the traced operator.
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn permittivity(&self) -> &PermittivityField {
        &self.permittivity
    }

    pub fn omega(&self) -> f64 {
        self.config.omega
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Interior nodes per side of the padded grid.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn unknowns(&self) -> usize {
        self.side * self.side
    }

    /// Actual collar width `c·h`.
    pub fn collar_width(&self) -> f64 {
        self.cells as f64 * self.h
    }

    /// Coordinate of padded interior index `a`.
    pub fn coordinate(&self, a: usize) -> f64 {
        -1.0 - self.collar_width() + (a + 1) as f64 * self.h
    }

    /// Damping profile `s (d/T)²` at depth `d` into the collar.
    pub fn damping(&self, x: f64) -> f64 {
        let d = (x.abs() - 1.0).max(0.0);
        self.config.pml_strength * (d / self.collar_width()).powi(2)
    }

    fn stretch(&self, x: f64) -> Complex64 {
        Complex64::new(1.0, self.damping(x) / self.config.omega)
    }

    /// Padded unknown index of unit-square node `(i, j)`.
    fn embed_index(&self, i: usize, j: usize) -> usize {
        (i + self.cells - 1) * self.side + (j + self.cells - 1)
    }

    fn eps_at(&self, a: usize, b: usize) -> f64 {
        let n = self.config.n;
        let (i, j) = (a as i64 - (self.cells as i64 - 1), b as i64 - (self.cells as i64 - 1));
        if (0..n as i64).contains(&i) && (0..n as i64).contains(&j) {
            self.permittivity.eps.values()[i as usize * n + j as usize].re
        } else {
            self.config.eps1
        }
    }

    /// The discrete operator `Δ_s − ω²ε` on the padded unknowns, with
    /// `Δ_s = Σ (1/s) ∂ (1/s) ∂` in each coordinate.
    pub fn assemble(&self) -> BandMatrix {
        let side = self.side;
        let h2 = self.h * self.h;
        let w2 = self.config.omega * self.config.omega;
        let mut m = BandMatrix::zeros(side * side, side, side);
        let coef: Vec<(Complex64, Complex64)> = (0..side)
            .map(|a| {
                let x = self.coordinate(a);
                let c = self.stretch(x);
                let plus = (c * self.stretch(x + 0.5 * self.h) * h2).inv();
                let minus = (c * self.stretch(x - 0.5 * self.h) * h2).inv();
                (minus, plus)
            })
            .collect();
        for a in 0..side {
            for b in 0..side {
                let p = a * side + b;
                let (xm, xp) = coef[a];
                let (ym, yp) = coef[b];
                m.add(p, p, -(xm + xp + ym + yp) - w2 * self.eps_at(a, b));
                if a > 0 {
                    m.add(p, p - side, xm);
                }
                if a + 1 < side {
                    m.add(p, p + side, xp);
                }
                if b > 0 {
                    m.add(p, p - 1, ym);
                }
                if b + 1 < side {
                    m.add(p, p + 1, yp);
                }
            }
        }
        m
    }

    /// `E` on the padded unknowns for a source given on the padded unknowns.
    pub fn solve_padded(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        if b.len() != self.unknowns() {
            return Err(Error::invalid("source length does not match the padded grid"));
        }
        let iw = Complex64::new(0.0, self.config.omega);
        let mut x: Vec<Complex64> = b.iter().map(|v| v * iw).collect();
        self.lu().solve_in_place(&mut x);
        Ok(x)
    }

    fn embed(&self, u: &[Complex64]) -> Vec<Complex64> {
        let n = self.config.n;
        let mut out = vec![ZERO; self.unknowns()];
        for i in 0..n {
            for j in 0..n {
                out[self.embed_index(i, j)] = u[i * n + j];
            }
        }
        out
    }

    fn restrict(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.config.n;
        let mut out = vec![ZERO; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = x[self.embed_index(i, j)];
            }
        }
        out
    }

    /// `A u`: the field on the unit square for a source on the unit square.
    pub fn apply_solution(&self, u: &[Complex64]) -> Vec<Complex64> {
        let iw = Complex64::new(0.0, self.config.omega);
        let mut x: Vec<Complex64> = self.embed(u).into_iter().map(|v| v * iw).collect();
        self.lu().solve_in_place(&mut x);
        self.restrict(&x)
    }

    /// `A* v` in the weighted inner product of the unit-square grid.
    pub fn apply_solution_adjoint(&self, v: &[Complex64]) -> Vec<Complex64> {
        let w = self.grid.weights();
        let weighted: Vec<Complex64> = v.iter().zip(w).map(|(x, wi)| x * wi).collect();
        let mut x = self.embed(&weighted);
        self.lu().solve_adjoint_in_place(&mut x);
        let miw = Complex64::new(0.0, -self.config.omega);
        self.restrict(&x).into_iter().zip(w).map(|(x, wi)| x * miw / wi).collect()
    }

    /// Solves for the field of a source on the unit square.
    pub fn helmholtz_solve(&self, b: &GridFunction) -> Result<GridFunction> {
        if **b.grid() != *self.grid {
            return Err(Error::GridMismatch);
        }
        let e = self.apply_solution(b.values().as_slice());
        GridFunction::new(self.grid.clone(), e.into())
    }

    /// `|E|²` on the unit square for the source `b`.
    pub fn field_intensity(&self, b: &GridFunction) -> Result<Vec<f64>> {
        Ok(self.helmholtz_solve(b)?.values().iter().map(|z| z.norm_sqr()).collect())
    }

    /// Unit-square nodes with `ξ > SUPPORT_THRESHOLD`.
    pub fn support(&self) -> Vec<usize> {
        self.permittivity
            .xi
            .values()
            .iter()
            .enumerate()
            .filter(|(_, x)| x.re > SUPPORT_THRESHOLD)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `H = (AM)* M (AM)` as an operator on the unit-square grid.
#[derive(Debug, Clone)]
pub struct IntensityOperator {
    pde: Arc<HelmholtzPML2D>,
    xi: Vec<f64>,
}

impl IntensityOperator {
    pub fn new(pde: Arc<HelmholtzPML2D>) -> Self {
        let xi = pde.permittivity.xi.real_values();
        Self { pde, xi }
    }

    pub fn pde(&self) -> &Arc<HelmholtzPML2D> {
        &self.pde
    }

    /// `|Ω| = ∬ ξ`.
    pub fn area(&self) -> f64 {
        self.pde.permittivity.area()
    }

    fn scaled(&self, u: &[Complex64]) -> Vec<Complex64> {
        u.iter().zip(&self.xi).map(|(v, x)| v * *x).collect()
    }

    fn apply_column(&self, u: &[Complex64]) -> Vec<Complex64> {
        let e = self.pde.apply_solution(&self.scaled(u));
        let back = self.pde.apply_solution_adjoint(&self.scaled(&e));
        self.scaled(&back)
    }

    /// `∬ ξ |A(ξ u)|²`; real and non-negative by construction.
    fn form_column(&self, u: &[Complex64]) -> f64 {
        let e = self.pde.apply_solution(&self.scaled(u));
        e.iter().zip(&self.xi).zip(self.pde.grid.weights()).map(|((z, x), w)| w * x * z.norm_sqr()).sum()
    }

    fn columns<T: Send>(&self, u: &DMatrix<Complex64>, f: impl Fn(&[Complex64]) -> T + Sync) -> Result<Vec<T>> {
        if u.nrows() != self.pde.grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok((0..u.ncols()).into_par_iter().map(|j| f(u.column(j).as_slice())).collect())
    }
}

impl LinearOperator for IntensityOperator {
    fn grid(&self) -> &Arc<Grid> {
        &self.pde.grid
    }

    fn is_self_adjoint(&self) -> bool {
        true
    }

    fn apply_matrix(&self, u: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        let cols = self.columns(u, |c| self.apply_column(c))?;
        let mut out = DMatrix::zeros(u.nrows(), u.ncols());
        for (j, c) in cols.iter().enumerate() {
            out.column_mut(j).copy_from_slice(c);
        }
        Ok(out)
    }

    fn quadratic_forms(&self, u: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
        Ok(self.columns(u, |c| self.form_column(c))?.into_iter().map(|v| Complex64::new(v, 0.0)).collect())
    }

    fn quadratic_forms_real(&self, g: &DMatrix<f64>) -> Result<Vec<Complex64>> {
        self.quadratic_forms(&g.map(|x| Complex64::new(x, 0.0)))
    }

    fn exact_trace(&self) -> Option<f64> {
        dense_intensity(&self.pde).ok().map(|d| d.trace)
    }
}

/// `H` restricted to the support of `ξ`, in the symmetrized form
/// `W^{1/2} H W^{−1/2}` so that it is Hermitian.
#[derive(Debug, Clone)]
pub struct DenseIntensity {
    pub support: Vec<usize>,
    pub matrix: DMatrix<Complex64>,
    pub trace: f64,
}

impl DenseIntensity {
    pub fn eigenvalues_desc(&self) -> Vec<f64> {
        hermitian_eigenvalues_desc(self.matrix.clone())
    }
}

/// Forms `H` column by column from solves against nodal basis functions.
pub fn dense_intensity(pde: &HelmholtzPML2D) -> Result<DenseIntensity> {
    let support = pde.support();
    if support.len() > DENSE_LIMIT {
        return Err(Error::TooLarge(format!(
            "{} support nodes exceed the dense limit {DENSE_LIMIT}; lower the grid resolution",
            support.len()
        )));
    }
    let xi = pde.permittivity.xi.real_values();
    let w = pde.grid.weights();
    let nn = pde.grid.len();
    let s = support.len();
    // C[r, c] = √(w_r ξ_r) (A e_c)_r ξ_c / √w_c over support rows and columns
    let cols: Vec<Vec<Complex64>> = support
        .par_iter()
        .map(|&c| {
            let mut e = vec![ZERO; nn];
            e[c] = Complex64::new(1.0, 0.0);
            let a = pde.apply_solution(&e);
            let scale = xi[c] / w[c].sqrt();
            support.iter().map(|&r| a[r] * ((w[r] * xi[r]).sqrt() * scale)).collect()
        })
        .collect();
    let mut c = DMatrix::<Complex64>::zeros(s, s);
    for (j, col) in cols.iter().enumerate() {
        c.column_mut(j).copy_from_slice(col);
    }
    let matrix = c.adjoint() * &c;
    let trace = c.iter().map(|z| z.norm_sqr()).sum();
    Ok(DenseIntensity { support, matrix, trace })
}

/// Leading `count` eigenvalues of `H`, descending.
pub fn spectrum_report(config: &PhotonicsConfig, count: usize) -> Result<Vec<f64>> {
    let pde = HelmholtzPML2D::new(config.clone())?;
    let dense = dense_intensity(&pde)?;
    if count > dense.support.len() {
        return Err(Error::invalid(format!(
            "requested {count} eigenvalues but the support has {} nodes",
            dense.support.len()
        )));
    }
    let mut ev = dense.eigenvalues_desc();
    ev.truncate(count);
    Ok(ev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldIntensity {
    /// `tr(H)/|Ω|`.
    pub value: f64,
    pub area: f64,
    pub estimate: TraceEstimate,
}

/// Trace estimate of `H` with GP probes on the unit square, divided by `|Ω|`.
pub fn mean_field_intensity_with(
    op: &IntensityOperator,
    m: usize,
    ell: f64,
    method: Method,
    seed: u64,
) -> Result<MeanFieldIntensity> {
    let sampler = ProbeSampler::new(SECovariance::new(ell, 2)?, op.grid().clone(), seed)?;
    let estimate = estimate(op, &sampler, m, method)?;
    let area = op.area();
    if area <= 0.0 {
        return Err(Error::invalid("cross-section does not cover any grid node"));
    }
    Ok(MeanFieldIntensity { value: estimate.value / area, area, estimate })
}

pub fn mean_field_intensity(
    config: &PhotonicsConfig,
    m: usize,
    ell: f64,
    method: Method,
    seed: u64,
) -> Result<MeanFieldIntensity> {
    let op = IntensityOperator::new(Arc::new(HelmholtzPML2D::new(config.clone())?));
    mean_field_intensity_with(&op, m, ell, method, seed)
}
