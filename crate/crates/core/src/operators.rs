//! The operator-function product contract and concrete operators.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::function_space::{Grid, GridFunction, Quasimatrix};
use crate::linalg::{singular_values_desc, symmetric_eigenvalues_desc, BandLu, BandMatrix, CyclicTridiagonal};
use crate::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn cplx(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// An operator known only through its action on grid functions.
///
/// Blocks of functions are passed as matrices whose columns hold node values
/// on [`LinearOperator::grid`].
pub trait LinearOperator: Send + Sync {
    fn grid(&self) -> &Arc<Grid>;

    fn is_self_adjoint(&self) -> bool;

    fn apply_matrix(&self, u: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>>;

    /// `F* u`. Self-adjoint operators reuse `apply_matrix`.
    fn apply_adjoint_matrix(&self, u: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        if self.is_self_adjoint() {
            self.apply_matrix(u)
        } else {
            Err(Error::invalid("operator does not provide an adjoint"))
        }
    }

    fn apply_real(&self, g: &DMatrix<f64>) -> Result<DMatrix<Complex64>> {
        self.apply_matrix(&g.map(cplx))
    }

    /// `⟨u_j, F u_j⟩` for every column.
    fn quadratic_forms(&self, u: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
        let fu = self.apply_matrix(u)?;
        Ok(column_forms(self.grid().weights(), u, &fu))
    }

    /// `⟨g_j, F g_j⟩` for every real column.
    fn quadratic_forms_real(&self, g: &DMatrix<f64>) -> Result<Vec<Complex64>> {
        let fg = self.apply_real(g)?;
        let w = self.grid().weights();
        Ok((0..g.ncols())
            .map(|j| {
                g.column(j)
                    .iter()
                    .zip(fg.column(j).iter())
                    .zip(w)
                    .fold(ZERO, |acc, ((&gi, fi), &wi)| acc + fi * (gi * wi))
            })
            .collect())
    }

    /// Exact trace when the operator can supply one.
    fn exact_trace(&self) -> Option<f64> {
        None
    }

    fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        check_grid(self.grid(), u.grid())?;
        let m = DMatrix::from_column_slice(u.grid().len(), 1, u.values().as_slice());
        let out = self.apply_matrix(&m)?;
        GridFunction::new(self.grid().clone(), out.column(0).into_owned())
    }

    fn apply_adjoint(&self, u: &GridFunction) -> Result<GridFunction> {
        check_grid(self.grid(), u.grid())?;
        let m = DMatrix::from_column_slice(u.grid().len(), 1, u.values().as_slice());
        let out = self.apply_adjoint_matrix(&m)?;
        GridFunction::new(self.grid().clone(), out.column(0).into_owned())
    }

    fn apply_quasi(&self, q: &Quasimatrix) -> Result<Quasimatrix> {
        check_grid(self.grid(), q.grid())?;
        let out = if q.is_real() { self.apply_real(&q.real_part())? } else { self.apply_matrix(q.matrix())? };
        Quasimatrix::new(self.grid().clone(), out)
    }
}

fn check_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

pub(crate) fn column_forms(w: &[f64], u: &DMatrix<Complex64>, fu: &DMatrix<Complex64>) -> Vec<Complex64> {
    (0..u.ncols())
        .map(|j| {
            u.column(j)
                .iter()
                .zip(fu.column(j).iter())
                .zip(w)
                .fold(ZERO, |acc, ((ui, fi), &wi)| acc + ui.conj() * fi * wi)
        })
        .collect()
}

/// `|⟨u, Fv⟩ − ⟨Fu, v⟩|` relative to `‖u‖‖Fv‖ + ‖Fu‖‖v‖`.
pub fn self_adjointness_defect(op: &dyn LinearOperator, u: &GridFunction, v: &GridFunction) -> Result<f64> {
    use crate::function_space::inner_product;
    let fu = op.apply(u)?;
    let fv = op.apply(v)?;
    let a = inner_product(u, &fv)?;
    let b = inner_product(&fu, v)?;
    let scale = u.norm() * fv.norm() + fu.norm() * v.norm();
    Ok(if scale == 0.0 { 0.0 } else { (a - b).norm() / scale })
}

/// `‖F(αu+βv) − αFu − βFv‖` relative to `‖Fu‖ + ‖Fv‖`.
pub fn linearity_defect(
    op: &dyn LinearOperator,
    u: &GridFunction,
    v: &GridFunction,
    alpha: Complex64,
    beta: Complex64,
) -> Result<f64> {
    let comb = u.scale(alpha).axpy(beta, v)?;
    let lhs = op.apply(&comb)?;
    let fu = op.apply(u)?;
    let fv = op.apply(v)?;
    let rhs = fu.scale(alpha).axpy(beta, &fv)?;
    let diff = lhs.axpy(cplx(-1.0), &rhs)?;
    let scale = fu.norm() + fv.norm();
    Ok(if scale == 0.0 { diff.norm() } else { diff.norm() / scale })
}

pub type KernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Integral operator with an explicit real kernel on a 1D grid,
/// `(Fu)_i = Σ_j w_j f(x_i, x_j) u_j`.
#[derive(Clone)]
pub struct KernelIntegralOperator {
    grid: Arc<Grid>,
    kernel: KernelFn,
    /// `f(x_i, x_j)`.
    matrix: DMatrix<f64>,
    /// `f(x_i, x_j) w_j`.
    weighted: DMatrix<f64>,
    symmetric: bool,
}

impl fmt::Debug for KernelIntegralOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelIntegralOperator")
            .field("nodes", &self.grid.len())
            .field("symmetric", &self.symmetric)
            .finish()
    }
}

impl KernelIntegralOperator {
    pub fn new(grid: Arc<Grid>, kernel: KernelFn) -> Result<Self> {
        let line = grid.as_line().ok_or_else(|| Error::invalid("kernel operators live on 1D grids"))?;
        let x = line.nodes();
        let n = x.len();
        let matrix = DMatrix::from_fn(n, n, |i, j| kernel(x[i], x[j]));
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel produced non-finite values on the grid"));
        }
        let w = grid.weights();
        let weighted = DMatrix::from_fn(n, n, |i, j| matrix[(i, j)] * w[j]);
        let scale = matrix.amax();
        let symmetric = symmetry_defect_of(&matrix) <= 1e-12 * scale.max(f64::MIN_POSITIVE);
        Ok(Self { grid, kernel, matrix, weighted, symmetric })
    }

    pub fn kernel(&self) -> &KernelFn {
        &self.kernel
    }

    /// Kernel values at node pairs.
    pub fn kernel_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Same kernel on another grid.
    pub fn on_grid(&self, grid: Arc<Grid>) -> Result<Self> {
        Self::new(grid, self.kernel.clone())
    }

    /// `Σ_i w_i f(x_i, x_i)`.
    pub fn trace(&self) -> f64 {
        self.grid.weights().iter().enumerate().map(|(i, w)| w * self.matrix[(i, i)]).sum()
    }

    /// `max |f(x_i, x_j) − f(x_j, x_i)|`.
    pub fn symmetry_defect(&self) -> f64 {
        symmetry_defect_of(&self.matrix)
    }

    /// `D^{1/2} F D^{1/2}`, similar to the weighted operator and sharing its
    /// spectrum and singular values.
    pub fn weighted_symmetric_form(&self) -> DMatrix<f64> {
        crate::linalg::weight_symmetric(&self.matrix, self.grid.weights())
    }

    /// Singular values of the discretized operator, descending.
    pub fn singular_values(&self) -> Vec<f64> {
        singular_values_desc(self.weighted_symmetric_form())
    }

    /// Eigenvalues of the symmetric part of the discretized operator,
    /// descending. For symmetric kernels these are the operator's eigenvalues.
    pub fn symmetric_part_eigenvalues(&self) -> Vec<f64> {
        let a = self.weighted_symmetric_form();
        let s = (&a + a.transpose()) * 0.5;
        symmetric_eigenvalues_desc(s)
    }

    /// `‖f‖_op`, the largest singular value.
    pub fn op_norm(&self) -> f64 {
        self.singular_values()[0]
    }

    /// Hilbert–Schmidt norm `(∬ f²)^{1/2}`.
    pub fn hs_norm(&self) -> f64 {
        self.weighted_symmetric_form().norm()
    }

    /// `max |f(x_i, x_j)|`.
    pub fn sup_norm(&self) -> f64 {
        self.matrix.amax()
    }

    pub fn psd_report(&self) -> PsdReport {
        let ev = self.symmetric_part_eigenvalues();
        PsdReport {
            max_eigenvalue: ev[0],
            min_eigenvalue: *ev.last().unwrap(),
            symmetry_defect: self.symmetry_defect(),
        }
    }
}

fn symmetry_defect_of(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut d: f64 = 0.0;
    for j in 0..n {
        for i in j + 1..n {
            d = d.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    d
}

/// Definiteness diagnostic for a discretized kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub max_eigenvalue: f64,
    pub min_eigenvalue: f64,
    pub symmetry_defect: f64,
}

impl PsdReport {
    /// Symmetric, with minimum eigenvalue ≥ −1e-8·λ_max.
    pub fn is_psd(&self) -> bool {
        self.symmetry_defect <= 1e-12 * self.max_eigenvalue.abs().max(1.0)
            && self.min_eigenvalue >= -1e-8 * self.max_eigenvalue
    }
}

impl LinearOperator for KernelIntegralOperator {
    fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn is_self_adjoint(&self) -> bool {
        self.symmetric
    }

    fn apply_matrix(&self, u: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        if u.nrows() != self.grid.len() {
            return Err(Error::GridMismatch);
        }
        let re = u.map(|z| z.re);
        let out_re = &self.weighted * re;
        if u.iter().all(|z| z.im == 0.0) {
            return Ok(out_re.map(cplx));
        }
        let out_im = &self.weighted * u.map(|z| z.im);
        Ok(out_re.zip_map(&out_im, Complex64::new))
    }

    fn apply_adjoint_matrix(&self, u: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        if u.nrows() != self.grid.len() {
            return Err(Error::GridMismatch);
        }
        // (F* u)_i = Σ_j w_j f(x_j, x_i) u_j
        let w = self.grid.weights();
        let n = w.len();
        let adj = DMatrix::from_fn(n, n, |i, j| self.matrix[(j, i)] * w[j]);
        let re = &adj * u.map(|z| z.re);
        let im = &adj * u.map(|z| z.im);
        Ok(re.zip_map(&im, Complex64::new))
    }

    fn apply_real(&self, g: &DMatrix<f64>) -> Result<DMatrix<Complex64>> {
        if g.nrows() != self.grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok((&self.weighted * g).map(cplx))
    }

    fn quadratic_forms_real(&self, g: &DMatrix<f64>) -> Result<Vec<Complex64>> {
        if g.nrows() != self.grid.len() {
            return Err(Error::GridMismatch);
        }
        let fg = &self.weighted * g;
        let w = self.grid.weights();
        Ok((0..g.ncols())
            .map(|j| {
                let s: f64 = g.column(j).iter().zip(fg.column(j).iter()).zip(w).map(|((a, b), c)| a * b * c).sum();
                cplx(s)
            })
            .collect())
    }

    fn exact_trace(&self) -> Option<f64> {
        Some(self.trace())
    }
}

/// `sin t / t` with the removable singularity filled in.
pub fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-8 {
        1.0 - t * t / 6.0
    } else {
        t.sin() / t
    }
}

/// The asymmetric smooth kernel with a logistic front along `x = y`.
pub fn helmholtz_like(x: f64, y: f64) -> f64 {
    let q = PI / 4.0;
    let (ax, ay) = (q * (x + 1.0), q * (y + 1.0));
    (1.0 - ax.cos()) * ay.sin() + (1.0 - ay.cos() * ax.sin()) / (1.0 + (5.0 * (x - y)).exp())
}

/// Three stationary sinc bumps of decreasing weight and width.
pub fn sinc_mixture(x: f64, y: f64) -> f64 {
    let t = x - y;
    sinc(t) + 0.5 * sinc(10.0 * t) + 0.25 * sinc(50.0 * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinKernel {
    HelmholtzLike,
    SincMixture,
}

impl BuiltinKernel {
    pub const ALL: [BuiltinKernel; 2] = [BuiltinKernel::HelmholtzLike, BuiltinKernel::SincMixture];

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinKernel::HelmholtzLike => "helmholtz_like",
            BuiltinKernel::SincMixture => "sinc_mixture",
        }
    }

    pub fn function(&self) -> KernelFn {
        match self {
            BuiltinKernel::HelmholtzLike => Arc::new(helmholtz_like),
            BuiltinKernel::SincMixture => Arc::new(sinc_mixture),
        }
    }
}

impl fmt::Display for BuiltinKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinKernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "helmholtz_like" => Ok(BuiltinKernel::HelmholtzLike),
            "sinc_mixture" => Ok(BuiltinKernel::SincMixture),
            other => Err(Error::invalid(format!("unknown kernel '{other}' (expected helmholtz_like or sinc_mixture)"))),
        }
    }
}

/// A builtin kernel on `[-1, 1]` discretized with `n` trapezoid nodes.
pub fn builtin_kernel(kernel: BuiltinKernel, n: usize) -> Result<KernelIntegralOperator> {
    KernelIntegralOperator::new(Grid::interval(-1.0, 1.0, n)?, kernel.function())
}

pub type PotentialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Real potential `v(x)`.
#[derive(Clone)]
pub struct Potential {
    name: String,
    f: PotentialFn,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Potential({})", self.name)
    }
}

impl Potential {
    pub fn new(name: impl Into<String>, f: PotentialFn) -> Self {
        Self { name: name.into(), f }
    }

    pub fn free() -> Self {
        Self::new("free", Arc::new(|_| 0.0))
    }

    /// Square wells of the given depth and width centered on multiples of
    /// `period`.
    pub fn kronig_penney(depth: f64, width: f64, period: f64) -> Result<Self> {
        if !(period > 0.0 && width > 0.0 && width <= period) {
            return Err(Error::invalid("wells need 0 < width <= period"));
        }
        Ok(Self::new(
            format!("kronig_penney(depth={depth}, width={width}, period={period})"),
            Arc::new(move |x: f64| {
                let r = x - period * (x / period).round();
                if r.abs() < 0.5 * width {
                    depth
                } else {
                    0.0
                }
            }),
        ))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    Dirichlet,
    Periodic,
}

/// Second-order finite differences for `−d²/dx² + v` on `[−L, L]`.
///
/// Dirichlet: `N + 2` grid nodes, spacing `2L/(N+1)`, unknowns at the `N`
/// interior nodes. Periodic: `N + 1` grid nodes, spacing `2L/N`, unknowns at
/// nodes `0..N` with node `N` identified with node 0.
///
/// Grid functions enter through a restriction `P` and leave through an
/// extension `E` with `⟨Eu, g⟩ = h·Σ conj(u_i)(Pg)_i`, so `E A⁻¹ P` is
/// self-adjoint whenever `A` is.
#[derive(Debug, Clone)]
pub struct Schrodinger1D {
    l: f64,
    n: usize,
    bc: BoundaryCondition,
    potential: Potential,
    grid: Arc<Grid>,
    h: f64,
    v: Vec<f64>,
}

impl Schrodinger1D {
    pub fn new(l: f64, n: usize, bc: BoundaryCondition, potential: Potential) -> Result<Self> {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::invalid(format!("half-width L must be positive, got {l}")));
        }
        let (nodes, h, first) = match bc {
            BoundaryCondition::Dirichlet => {
                if n < 1 {
                    return Err(Error::invalid("need at least one interior node"));
                }
                (n + 2, 2.0 * l / (n + 1) as f64, 1)
            }
            BoundaryCondition::Periodic => {
                if n < 3 {
                    return Err(Error::invalid("periodic grids need at least three unknowns"));
                }
                (n + 1, 2.0 * l / n as f64, 0)
            }
        };
        let grid = Grid::interval(-l, l, nodes)?;
        let x = grid.as_line().unwrap().nodes();
        let v: Vec<f64> = (first..first + n).map(|i| potential.eval(x[i])).collect();
        if v.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("potential is not finite on the grid"));
        }
        Ok(Self { l, n, bc, potential, grid, h, v })
    }

    pub fn half_width(&self) -> f64 {
        self.l
    }

    pub fn unknowns(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn boundary(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Grid values to unknowns.
    pub fn restrict(&self, g: &[Complex64]) -> Vec<Complex64> {
        match self.bc {
            BoundaryCondition::Dirichlet => g[1..=self.n].to_vec(),
            BoundaryCondition::Periodic => {
                let mut u = g[..self.n].to_vec();
                u[0] = 0.5 * (g[0] + g[self.n]);
                u
            }
        }
    }

    /// Unknowns to grid values.
    pub fn extend(&self, u: &[Complex64]) -> Vec<Complex64> {
        match self.bc {
            BoundaryCondition::Dirichlet => {
                let mut g = vec![ZERO; self.n + 2];
                g[1..=self.n].copy_from_slice(u);
                g
            }
            BoundaryCondition::Periodic => {
                let mut g = u.to_vec();
                g.push(u[0]);
                g
            }
        }
    }

    /// The real symmetric matrix `ℒ_h` on the unknowns.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let c = 1.0 / (self.h * self.h);
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = 2.0 * c + self.v[i];
            if i + 1 < n {
                a[(i, i + 1)] = -c;
                a[(i + 1, i)] = -c;
            }
        }
        if self.bc == BoundaryCondition::Periodic {
            a[(0, n - 1)] -= c;
            a[(n - 1, 0)] -= c;
        }
        a
    }

    /// Eigenvalues of `ℒ_h`, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev = symmetric_eigenvalues_desc(self.dense_matrix());
        ev.reverse();
        ev
    }

    /// `(ℒ_h − z) u` on the unknowns.
    pub fn apply_shifted(&self, u: &[Complex64], z: Complex64) -> Vec<Complex64> {
        let n = self.n;
        let c = 1.0 / (self.h * self.h);
        let periodic = self.bc == BoundaryCondition::Periodic;
        (0..n)
            .map(|i| {
                let left = if i > 0 {
                    u[i - 1]
                } else if periodic {
                    u[n - 1]
                } else {
                    ZERO
                };
                let right = if i + 1 < n {
                    u[i + 1]
                } else if periodic {
                    u[0]
                } else {
                    ZERO
                };
                (2.0 * c + self.v[i] - z) * u[i] - c * (left + right)
            })
            .collect()
    }

    fn factor(&self, z: Complex64) -> Result<ShiftedSolver> {
        let n = self.n;
        let c = 1.0 / (self.h * self.h);
        let diag: Vec<Complex64> = self.v.iter().map(|&vi| cplx(2.0 * c + vi) - z).collect();
        match self.bc {
            BoundaryCondition::Dirichlet => {
                let mut a = BandMatrix::zeros(n, 1, 1);
                for i in 0..n {
                    a.add(i, i, diag[i]);
                    if i + 1 < n {
                        a.add(i, i + 1, cplx(-c));
                        a.add(i + 1, i, cplx(-c));
                    }
                }
                Ok(ShiftedSolver::Band(a.factor()?))
            }
            BoundaryCondition::Periodic => {
                let off = vec![cplx(-c); n - 1];
                Ok(ShiftedSolver::Cyclic(CyclicTridiagonal::new(&off, &diag, &off, cplx(-c), cplx(-c))?))
            }
        }
    }
}

#[derive(Debug, Clone)]
enum ShiftedSolver {
    Band(BandLu),
    Cyclic(CyclicTridiagonal),
}

impl ShiftedSolver {
    fn solve_in_place(&self, b: &mut [Complex64]) {
        match self {
            ShiftedSolver::Band(lu) => lu.solve_in_place(b),
            ShiftedSolver::Cyclic(c) => c.solve_in_place(b),
        }
    }
}

/// `R(z) = E (ℒ_h − z)⁻¹ P` with the factorization cached.
#[derive(Debug, Clone)]
pub struct SchrodingerResolvent {
    disc: Arc<Schrodinger1D>,
    z: Complex64,
    solver: ShiftedSolver,
}

impl SchrodingerResolvent {
    pub fn new(disc: Arc<Schrodinger1D>, z: Complex64) -> Result<Self> {
        if z.im == 0.0 {
            return Err(Error::invalid("resolvent shift must lie off the real axis"));
        }
        let solver = disc.factor(z)?;
        Ok(Self { disc, z, solver })
    }

    pub fn shift(&self) -> Complex64 {
        self.z
    }

    pub fn discretization(&self) -> &Arc<Schrodinger1D> {
        &self.disc
    }

    /// `(ℒ_h − z)⁻¹` on the unknowns.
    pub fn solve_unknowns(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solver.solve_in_place(&mut x);
        x
    }

    fn apply_column(&self, g: &[Complex64]) -> Vec<Complex64> {
        let u = self.solve_unknowns(&self.disc.restrict(g));
        self.disc.extend(&u)
    }
}

/// Solves `(ℒ_h − z) u = g` for a grid function `g`.
pub fn resolvent_apply(op: &SchrodingerResolvent, g: &GridFunction) -> Result<GridFunction> {
    op.apply(g)
}

impl LinearOperator for SchrodingerResolvent {
    fn grid(&self) -> &Arc<Grid> {
        self.disc.grid()
    }

    fn is_self_adjoint(&self) -> bool {
        false
    }

    fn apply_matrix(&self, u: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        if u.nrows() != self.grid().len() {
            return Err(Error::GridMismatch);
        }
        let mut out = DMatrix::zeros(u.nrows(), u.ncols());
        for j in 0..u.ncols() {
            let col = self.apply_column(u.column(j).as_slice());
            out.column_mut(j).copy_from_slice(&col);
        }
        Ok(out)
    }

    /// `R(z)* = R(z̄)`; since `ℒ_h − z` is complex symmetric this is
    /// `conj ∘ R(z) ∘ conj`.
    fn apply_adjoint_matrix(&self, u: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        Ok(self.apply_matrix(&u.map(|z| z.conj()))?.map(|z| z.conj()))
    }
}

/// `T = (1/π) Im Σ_j r_j (ℒ_h − λ + p_j σ)⁻¹`, a real symmetric operator.
///
/// Each eigenvalue `μ` of `ℒ_h` maps to `g((λ − μ)/σ)/σ` with
/// `g(u) = −(1/π) Im Σ_j r_j/(u − p_j)`.
#[derive(Debug, Clone)]
pub struct RationalFilteredResolvent {
    disc: Arc<Schrodinger1D>,
    lambda: f64,
    sigma: f64,
    residues: Vec<Complex64>,
    resolvents: Vec<SchrodingerResolvent>,
}

impl RationalFilteredResolvent {
    pub fn new(
        disc: Arc<Schrodinger1D>,
        lambda: f64,
        sigma: f64,
        poles: &[Complex64],
        residues: &[Complex64],
    ) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("smoothing sigma must be positive, got {sigma}")));
        }
        if !lambda.is_finite() {
            return Err(Error::invalid("evaluation point must be finite"));
        }
        if poles.is_empty() || poles.len() != residues.len() {
            return Err(Error::invalid("need matching, non-empty pole and residue lists"));
        }
        let resolvents = poles
            .iter()
            .map(|&p| SchrodingerResolvent::new(disc.clone(), cplx(lambda) - p * sigma))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { disc, lambda, sigma, residues: residues.to_vec(), resolvents })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn order(&self) -> usize {
        self.residues.len()
    }

    /// `(1/π) Im Σ r_j (A_j⁻¹ b)` for real unknown values `b`.
    fn filter_real(&self, b: &[f64]) -> Vec<f64> {
        let bc: Vec<Complex64> = b.iter().map(|&x| cplx(x)).collect();
        let mut acc = vec![ZERO; b.len()];
        for (r, res) in self.residues.iter().zip(&self.resolvents) {
            let x = res.solve_unknowns(&bc);
            for (a, xi) in acc.iter_mut().zip(&x) {
                *a += r * xi;
            }
        }
        acc.iter().map(|z| z.im / PI).collect()
    }

    fn apply_real_column(&self, g: &[f64]) -> Vec<f64> {
        let gc: Vec<Complex64> = g.iter().map(|&x| cplx(x)).collect();
        let b: Vec<f64> = self.disc.restrict(&gc).iter().map(|z| z.re).collect();
        let t = self.filter_real(&b);
        let tc: Vec<Complex64> = t.iter().map(|&x| cplx(x)).collect();
        self.disc.extend(&tc).iter().map(|z| z.re).collect()
    }

    /// Dense `T` on the unknowns, formed from explicit inverses.
    pub fn dense_unknown_matrix(&self) -> DMatrix<f64> {
        let n = self.disc.unknowns();
        let a = self.disc.dense_matrix().map(cplx);
        let mut acc = DMatrix::<Complex64>::zeros(n, n);
        for (r, res) in self.residues.iter().zip(&self.resolvents) {
            let shifted = &a - DMatrix::<Complex64>::identity(n, n) * res.shift();
            let inv = shifted.try_inverse().expect("shift off the real axis");
            acc += inv * *r;
        }
        acc.map(|z| z.im / PI)
    }

    /// Exact trace from the spectrum of `ℒ_h`.
    pub fn spectral_trace(&self, poles: &[Complex64]) -> f64 {
        let g = |u: f64| -> f64 {
            -poles.iter().zip(&self.residues).map(|(p, r)| r / (cplx(u) - p)).sum::<Complex64>().im / PI
        };
        self.disc.eigenvalues().iter().map(|mu| g((self.lambda - mu) / self.sigma) / self.sigma).sum()
    }
}

/// `⟨g, T g⟩` for a real grid function `g`; uses exactly `K` resolvent solves.
pub fn filtered_quadratic_form(op: &RationalFilteredResolvent, g: &GridFunction) -> Result<f64> {
    check_grid(op.grid(), g.grid())?;
    if g.values().iter().any(|z| z.im != 0.0) {
        return Err(Error::invalid("filtered quadratic forms take real probes"));
    }
    let m = DMatrix::from_column_slice(g.grid().len(), 1, &g.real_values());
    Ok(op.quadratic_forms_real(&m)?[0].re)
}

impl LinearOperator for RationalFilteredResolvent {
    fn grid(&self) -> &Arc<Grid> {
        self.disc.grid()
    }

    fn is_self_adjoint(&self) -> bool {
        true
    }

    fn apply_matrix(&self, u: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        let re = self.apply_real(&u.map(|z| z.re))?;
        if u.iter().all(|z| z.im == 0.0) {
            return Ok(re);
        }
        let im = self.apply_real(&u.map(|z| z.im))?;
        Ok(re.zip_map(&im, |a, b| Complex64::new(a.re, b.re)))
    }

    fn apply_real(&self, g: &DMatrix<f64>) -> Result<DMatrix<Complex64>> {
        if g.nrows() != self.grid().len() {
            return Err(Error::GridMismatch);
        }
        use rayon::prelude::*;
        let cols: Vec<Vec<f64>> =
            (0..g.ncols()).into_par_iter().map(|j| self.apply_real_column(g.column(j).as_slice())).collect();
        let mut out = DMatrix::zeros(g.nrows(), g.ncols());
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                out[(i, j)] = cplx(*v);
            }
        }
        Ok(out)
    }

    fn quadratic_forms_real(&self, g: &DMatrix<f64>) -> Result<Vec<Complex64>> {
        if g.nrows() != self.grid().len() {
            return Err(Error::GridMismatch);
        }
        use rayon::prelude::*;
        let h = self.disc.spacing();
        Ok((0..g.ncols())
            .into_par_iter()
            .map(|j| {
                let gc: Vec<Complex64> = g.column(j).iter().map(|&x| cplx(x)).collect();
                let b: Vec<f64> = self.disc.restrict(&gc).iter().map(|z| z.re).collect();
                let t = self.filter_real(&b);
                cplx(h * b.iter().zip(&t).map(|(x, y)| x * y).sum::<f64>())
            })
            .collect())
    }
}

/// Real grid function as a one-column real matrix.
pub fn real_column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}
