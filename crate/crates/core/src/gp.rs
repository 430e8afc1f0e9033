//! Squared-exponential Gaussian-process probes.
//!
//! Probe columns are reproducible from `(seed, role, column)`: each column has
//! its own ChaCha stream, so blocks of probes can be drawn in any order or in
//! parallel and still agree bit-for-bit with a sequential draw.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::function_space::{Domain, Grid, Grid1D, Quasimatrix};
use crate::linalg::{symmetric_eigenvalues_desc, weight_symmetric};
use crate::{Error, Result};

/// Unit-mass squared-exponential kernel with length-scale `ell`, as a tensor
/// product over `dim` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SECovariance {
    pub ell: f64,
    pub dim: usize,
}

impl SECovariance {
    pub fn new(ell: f64, dim: usize) -> Result<Self> {
        if !(ell.is_finite() && ell > 0.0) {
            return Err(Error::invalid(format!("length-scale must be positive, got {ell}")));
        }
        if dim != 1 && dim != 2 {
            return Err(Error::invalid(format!("dimension must be 1 or 2, got {dim}")));
        }
        Ok(Self { ell, dim })
    }

    /// One-dimensional factor `exp(−r²/(2ℓ²)) / (ℓ√(2π))`.
    pub fn eval_1d(&self, r: f64) -> f64 {
        (-r * r / (2.0 * self.ell * self.ell)).exp() / (self.ell * (2.0 * PI).sqrt())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        x.iter().zip(y).map(|(a, b)| self.eval_1d(a - b)).product()
    }

    /// Kernel matrix on the nodes of a 1D grid.
    pub fn matrix_1d(&self, g: &Grid1D) -> DMatrix<f64> {
        let x = g.nodes();
        DMatrix::from_fn(x.len(), x.len(), |i, j| self.eval_1d(x[i] - x[j]))
    }
}

/// `K_ij = K_SE(x_i, x_j)` over all grid nodes. For 2D grids this is the
/// Kronecker product of the two 1D matrices and is dense in all nodes.
pub fn covariance_matrix(cov: &SECovariance, grid: &Grid) -> Result<DMatrix<f64>> {
    match (grid.domain(), cov.dim) {
        (Domain::Interval(g), 1) => Ok(cov.matrix_1d(g)),
        (Domain::Rectangle(g), 2) => Ok(cov.matrix_1d(&g.gx).kronecker(&cov.matrix_1d(&g.gy))),
        _ => Err(Error::invalid("covariance dimension does not match the grid")),
    }
}

fn op_norm_1d(cov: &SECovariance, g: &Grid1D) -> f64 {
    let k = weight_symmetric(&cov.matrix_1d(g), g.weights());
    symmetric_eigenvalues_desc(k)[0]
}

/// Largest eigenvalue of `D^{1/2} K D^{1/2}`. On a tensor grid the weighted
/// operator is a Kronecker product, so its norm is the product of 1D norms.
pub fn kernel_op_norm(cov: &SECovariance, grid: &Grid) -> Result<f64> {
    match (grid.domain(), cov.dim) {
        (Domain::Interval(g), 1) => Ok(op_norm_1d(cov, g)),
        (Domain::Rectangle(g), 2) => Ok(op_norm_1d(cov, &g.gx) * op_norm_1d(cov, &g.gy)),
        _ => Err(Error::invalid("covariance dimension does not match the grid")),
    }
}

/// Eigenvalues of the weighted covariance operator, descending.
pub fn kernel_eigenvalues(cov: &SECovariance, grid: &Grid) -> Result<Vec<f64>> {
    match (grid.domain(), cov.dim) {
        (Domain::Interval(g), 1) => Ok(symmetric_eigenvalues_desc(weight_symmetric(&cov.matrix_1d(g), g.weights()))),
        (Domain::Rectangle(g), 2) => {
            let ex = symmetric_eigenvalues_desc(weight_symmetric(&cov.matrix_1d(&g.gx), g.gx.weights()));
            let ey = symmetric_eigenvalues_desc(weight_symmetric(&cov.matrix_1d(&g.gy), g.gy.weights()));
            let mut ev: Vec<f64> = ex.iter().flat_map(|a| ey.iter().map(move |b| a * b)).collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            Ok(ev)
        }
        _ => Err(Error::invalid("covariance dimension does not match the grid")),
    }
}

/// Jitter schedule relative to the largest diagonal entry.
const JITTER_START: f64 = 1e-14;
const JITTER_MAX: f64 = 1e-8;

/// Lower Cholesky factor of `K + τ·max(diag K)·I` for the smallest `τ` in the
/// schedule that succeeds. Returns the factor and the absolute jitter used.
fn jittered_cholesky(k: &DMatrix<f64>, ell: f64) -> Result<(DMatrix<f64>, f64)> {
    let dmax = k.diagonal().max();
    let mut tau = JITTER_START;
    loop {
        let jitter = tau * dmax;
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(ch) = kj.cholesky() {
            return Ok((ch.l(), jitter));
        }
        tau *= 10.0;
        if tau > JITTER_MAX * 1.000001 {
            return Err(Error::DegenerateCovariance { ell, jitter });
        }
    }
}

/// Independent probe families. Each role owns a disjoint set of RNG streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeRole {
    Hutchinson = 0,
    Range = 1,
    Residual = 2,
}

/// The RNG for one probe column.
pub fn column_rng(seed: u64, role: ProbeRole, column: u64) -> ChaCha8Rng {
    assert!(column < 1 << 56, "column index exceeds the stream space");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((role as u64) << 56) | column);
    rng
}

#[derive(Debug)]
enum Factor {
    Line(DMatrix<f64>),
    Plane { lx: DMatrix<f64>, ly: DMatrix<f64> },
}

/// Draws GP(0, K_SE) probe functions on a fixed grid.
#[derive(Debug, Clone)]
pub struct ProbeSampler {
    cov: SECovariance,
    grid: Arc<Grid>,
    factor: Arc<Factor>,
    jitter: f64,
    seed: u64,
}

impl ProbeSampler {
    pub fn new(cov: SECovariance, grid: Arc<Grid>, seed: u64) -> Result<Self> {
        let (factor, jitter) = match (grid.domain(), cov.dim) {
            (Domain::Interval(g), 1) => {
                let (l, j) = jittered_cholesky(&cov.matrix_1d(g), cov.ell)?;
                (Factor::Line(l), j)
            }
            (Domain::Rectangle(g), 2) => {
                let (lx, jx) = jittered_cholesky(&cov.matrix_1d(&g.gx), cov.ell)?;
                let (ly, jy) = jittered_cholesky(&cov.matrix_1d(&g.gy), cov.ell)?;
                (Factor::Plane { lx, ly }, jx.max(jy))
            }
            _ => return Err(Error::invalid("covariance dimension does not match the grid")),
        };
        Ok(Self { cov, grid, factor: Arc::new(factor), jitter, seed })
    }

    /// Same factorization, different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn covariance(&self) -> &SECovariance {
        &self.cov
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Absolute diagonal jitter added before factorization (largest over
    /// the 1D factors in 2D).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Real node values of columns `start..start+count` of the given role.
    pub fn sample_real(&self, role: ProbeRole, start: usize, count: usize) -> DMatrix<f64> {
        let n = self.grid.len();
        match &*self.factor {
            Factor::Line(l) => {
                let mut z = DMatrix::<f64>::zeros(n, count);
                for c in 0..count {
                    let mut rng = column_rng(self.seed, role, (start + c) as u64);
                    for v in z.column_mut(c).iter_mut() {
                        *v = StandardNormal.sample(&mut rng);
                    }
                }
                l * z
            }
            Factor::Plane { lx, ly } => {
                let (nx, ny) = (lx.nrows(), ly.nrows());
                let mut out = DMatrix::<f64>::zeros(n, count);
                for c in 0..count {
                    let mut rng = column_rng(self.seed, role, (start + c) as u64);
                    let mut zt = DMatrix::<f64>::zeros(ny, nx);
                    for i in 0..nx {
                        for j in 0..ny {
                            zt[(j, i)] = StandardNormal.sample(&mut rng);
                        }
                    }
                    // value(i, j) = Σ lx[i,a] z[a,b] ly[j,b]  ⇒  valuesᵀ = ly · zᵀ · lxᵀ
                    let vt = ly * zt * lx.transpose();
                    // vt[(j, i)] is node (i, j); column-major vt is already i*ny + j order
                    out.column_mut(c).copy_from_slice(vt.as_slice());
                }
                out
            }
        }
    }

    /// `count` Hutchinson-role probes starting at column 0.
    pub fn sample(&self, count: usize) -> Result<Quasimatrix> {
        self.sample_role(ProbeRole::Hutchinson, 0, count)
    }

    pub fn sample_role(&self, role: ProbeRole, start: usize, count: usize) -> Result<Quasimatrix> {
        if count == 0 {
            return Err(Error::invalid("probe count must be at least 1"));
        }
        Quasimatrix::from_real(self.grid.clone(), &self.sample_real(role, start, count))
    }

    /// A single real probe as a vector of node values.
    pub fn sample_one(&self, role: ProbeRole, column: usize) -> DVector<f64> {
        self.sample_real(role, column, 1).column(0).into_owned()
    }
}
