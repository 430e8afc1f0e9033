//! Quadrature grids, grid functions and quasimatrices.
//!
//! Every function is stored by its values at the nodes of a composite
//! trapezoid grid; the grid weights define the L² inner product
//! `<u, v> = Σ w_i conj(u_i) v_i`. A [`Quasimatrix`] is a block of such
//! functions sharing one grid, the continuous analogue of a tall-skinny
//! matrix.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Composite trapezoid grid on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    a: f64,
    b: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid1D {
    /// Uniform trapezoid grid with `n >= 2` nodes including both endpoints.
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::invalid(format!("interval [{a}, {b}] is empty or not finite")));
        }
        if n < 2 {
            return Err(Error::invalid("a grid needs at least two nodes"));
        }
        let h = (b - a) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| a + i as f64 * h).collect();
        nodes[n - 1] = b;
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Ok(Self { a, b, nodes, weights })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> f64 {
        self.width() / (self.len() - 1) as f64
    }
}

/// Tensor-product grid. Node `(i, j)` (x index `i`, y index `j`) is stored at
/// flat index `i * ny + j` and carries weight `wx_i * wy_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub gx: Grid1D,
    pub gy: Grid1D,
}

impl Grid2D {
    pub fn new(gx: Grid1D, gy: Grid1D) -> Self {
        Self { gx, gy }
    }

    pub fn nx(&self) -> usize {
        self.gx.len()
    }

    pub fn ny(&self) -> usize {
        self.gy.len()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny() + j
    }

    pub fn point(&self, idx: usize) -> (f64, f64) {
        let ny = self.ny();
        (self.gx.nodes()[idx / ny], self.gy.nodes()[idx % ny])
    }

    pub fn area(&self) -> f64 {
        self.gx.width() * self.gy.width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Interval(Grid1D),
    Rectangle(Grid2D),
}

/// A quadrature grid on an interval or an axis-aligned box, with the flat
/// weight vector precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    domain: Domain,
    weights: Vec<f64>,
}

impl Grid {
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Arc<Self>> {
        Ok(Arc::new(Self::from_line(Grid1D::uniform(a, b, n)?)))
    }

    pub fn from_line(g: Grid1D) -> Self {
        let weights = g.weights().to_vec();
        Self { domain: Domain::Interval(g), weights }
    }

    pub fn from_plane(g: Grid2D) -> Self {
        let mut weights = Vec::with_capacity(g.nx() * g.ny());
        for &wx in g.gx.weights() {
            for &wy in g.gy.weights() {
                weights.push(wx * wy);
            }
        }
        Self { domain: Domain::Rectangle(g), weights }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn as_line(&self) -> Option<&Grid1D> {
        match &self.domain {
            Domain::Interval(g) => Some(g),
            Domain::Rectangle(_) => None,
        }
    }

    pub fn as_plane(&self) -> Option<&Grid2D> {
        match &self.domain {
            Domain::Rectangle(g) => Some(g),
            Domain::Interval(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Lebesgue measure of the domain.
    pub fn measure(&self) -> f64 {
        match &self.domain {
            Domain::Interval(g) => g.width(),
            Domain::Rectangle(g) => g.area(),
        }
    }
}

fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Values of a scalar function at the nodes of a grid.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: DVector<Complex64>,
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: DVector<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!("{} values for a grid with {} nodes", values.len(), grid.len())));
        }
        Ok(Self { grid, values })
    }

    pub fn from_real(grid: Arc<Grid>, values: &[f64]) -> Result<Self> {
        let v = DVector::from_iterator(values.len(), values.iter().map(|&x| Complex64::new(x, 0.0)));
        Self::new(grid, v)
    }

    /// Samples `f` at the nodes of a 1D grid.
    pub fn from_fn_1d(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let line = grid.as_line().ok_or_else(|| Error::invalid("expected a 1D grid"))?;
        let vals: Vec<f64> = line.nodes().iter().map(|&x| f(x)).collect();
        Self::from_real(grid, &vals)
    }

    /// Samples `f` at the nodes of a 2D grid.
    pub fn from_fn_2d(grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let plane = grid.as_plane().ok_or_else(|| Error::invalid("expected a 2D grid"))?;
        let vals: Vec<f64> = (0..grid.len())
            .map(|k| {
                let (x, y) = plane.point(k);
                f(x, y)
            })
            .collect();
        Self::from_real(grid, &vals)
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self { grid, values: DVector::zeros(n) }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &DVector<Complex64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<Complex64> {
        self.values
    }

    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    pub fn norm(&self) -> f64 {
        weighted_dot(self.grid.weights(), self.values.as_slice(), self.values.as_slice()).re.max(0.0).sqrt()
    }

    pub fn scale(&self, alpha: Complex64) -> Self {
        Self { grid: self.grid.clone(), values: &self.values * alpha }
    }

    pub fn axpy(&self, alpha: Complex64, other: &GridFunction) -> Result<Self> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid: self.grid.clone(), values: &self.values + &other.values * alpha })
    }
}

fn weighted_dot(w: &[f64], u: &[Complex64], v: &[Complex64]) -> Complex64 {
    w.iter().zip(u).zip(v).fold(Complex64::new(0.0, 0.0), |acc, ((&wi, ui), vi)| acc + ui.conj() * vi * wi)
}

/// `<u, v> = Σ w_i conj(u_i) v_i`, conjugate-linear in `u`.
pub fn inner_product(u: &GridFunction, v: &GridFunction) -> Result<Complex64> {
    if !same_grid(&u.grid, &v.grid) {
        return Err(Error::GridMismatch);
    }
    Ok(weighted_dot(u.grid.weights(), u.values.as_slice(), v.values.as_slice()))
}

/// An ordered collection of grid functions on one grid, stored column-wise.
#[derive(Debug, Clone)]
pub struct Quasimatrix {
    grid: Arc<Grid>,
    columns: DMatrix<Complex64>,
}

impl Quasimatrix {
    pub fn new(grid: Arc<Grid>, columns: DMatrix<Complex64>) -> Result<Self> {
        if columns.nrows() != grid.len() {
            return Err(Error::invalid(format!(
                "quasimatrix with {} rows on a grid with {} nodes",
                columns.nrows(),
                grid.len()
            )));
        }
        Ok(Self { grid, columns })
    }

    pub fn from_real(grid: Arc<Grid>, columns: &DMatrix<f64>) -> Result<Self> {
        Self::new(grid, columns.map(|x| Complex64::new(x, 0.0)))
    }

    pub fn from_columns(grid: Arc<Grid>, cols: &[GridFunction]) -> Result<Self> {
        let n = grid.len();
        let mut m = DMatrix::zeros(n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            if !same_grid(&grid, &c.grid) {
                return Err(Error::GridMismatch);
            }
            m.set_column(j, &c.values);
        }
        Ok(Self { grid, columns: m })
    }

    pub fn empty(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self { grid, columns: DMatrix::zeros(n, 0) }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn ncols(&self) -> usize {
        self.columns.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.columns
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.columns
    }

    pub fn column(&self, j: usize) -> GridFunction {
        GridFunction { grid: self.grid.clone(), values: self.columns.column(j).into_owned() }
    }

    /// Columns `start..start + count` as a new quasimatrix.
    pub fn columns_range(&self, start: usize, count: usize) -> Self {
        Self { grid: self.grid.clone(), columns: self.columns.columns(start, count).into_owned() }
    }

    /// True when every entry has an exactly zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.columns.iter().all(|z| z.im == 0.0)
    }

    pub fn real_part(&self) -> DMatrix<f64> {
        self.columns.map(|z| z.re)
    }

    pub fn imag_part(&self) -> DMatrix<f64> {
        self.columns.map(|z| z.im)
    }

    /// `[<b_j, c_j>]_j` for two quasimatrices of equal shape.
    pub fn column_inner_products(&self, other: &Quasimatrix) -> Result<Vec<Complex64>> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        if self.ncols() != other.ncols() {
            return Err(Error::invalid("quasimatrices have different column counts"));
        }
        let w = self.grid.weights();
        Ok((0..self.ncols())
            .map(|j| weighted_dot(w, self.columns.column(j).as_slice(), other.columns.column(j).as_slice()))
            .collect())
    }

    /// `B* C`, the matrix of weighted inner products between columns.
    pub fn adjoint_times(&self, other: &Quasimatrix) -> Result<DMatrix<Complex64>> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        let mut wc = other.columns.clone();
        scale_rows(&mut wc, self.grid.weights());
        Ok(self.columns.ad_mul(&wc))
    }

    /// `B M` for a small coefficient matrix `M`.
    pub fn times(&self, coeffs: &DMatrix<Complex64>) -> Result<Quasimatrix> {
        if coeffs.nrows() != self.ncols() {
            return Err(Error::invalid("coefficient matrix has the wrong number of rows"));
        }
        Ok(Self { grid: self.grid.clone(), columns: &self.columns * coeffs })
    }

    pub fn sub(&self, other: &Quasimatrix) -> Result<Quasimatrix> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        if self.columns.shape() != other.columns.shape() {
            return Err(Error::invalid("quasimatrices have different shapes"));
        }
        Ok(Self { grid: self.grid.clone(), columns: &self.columns - &other.columns })
    }

    /// Largest column L² norm.
    pub fn max_column_norm(&self) -> f64 {
        let w = self.grid.weights();
        (0..self.ncols())
            .map(|j| {
                let c = self.columns.column(j);
                weighted_dot(w, c.as_slice(), c.as_slice()).re.max(0.0).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

fn scale_rows(m: &mut DMatrix<Complex64>, s: &[f64]) {
    for mut col in m.column_iter_mut() {
        for (z, &si) in col.iter_mut().zip(s) {
            *z *= si;
        }
    }
}

/// `B*B`, Hermitian by construction.
pub fn gram(b: &Quasimatrix) -> DMatrix<Complex64> {
    let g = b.adjoint_times(b).expect("same grid");
    (&g + g.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Result of a weighted QR factorization `B = Q R`.
#[derive(Debug, Clone)]
pub struct QrFactors {
    /// Orthonormal columns spanning the numerical range of `B`.
    pub q: Quasimatrix,
    /// `rank × k` upper-triangular (echelon) factor with non-negative pivots.
    pub r: DMatrix<Complex64>,
    /// Indices of the input columns that produced a new direction.
    pub pivots: Vec<usize>,
}

impl QrFactors {
    pub fn rank(&self) -> usize {
        self.q.ncols()
    }
}

/// Relative threshold below which a column is treated as linearly dependent.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Weighted QR of a quasimatrix.
///
/// Node values are scaled by `sqrt(w)`, orthogonalized with two passes of
/// classical Gram–Schmidt, and unscaled. Columns whose remaining norm falls
/// below `RANK_TOLERANCE` times the largest column norm are dropped and the
/// reduced rank is reported through [`QrFactors::rank`].
pub fn qr(b: &Quasimatrix) -> Result<QrFactors> {
    let k = b.ncols();
    if k == 0 {
        return Err(Error::invalid("QR of a quasimatrix with no columns"));
    }
    let n = b.grid.len();
    let sw: Vec<f64> = b.grid.weights().iter().map(|w| w.sqrt()).collect();
    let mut scaled = b.columns.clone();
    scale_rows(&mut scaled, &sw);

    let scale = (0..k).map(|j| scaled.column(j).norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::invalid("QR of an all-zero quasimatrix"));
    }
    let tol = RANK_TOLERANCE * scale;

    let mut q = DMatrix::<Complex64>::zeros(n, k);
    let mut r = DMatrix::<Complex64>::zeros(k, k);
    let mut pivots = Vec::new();
    for j in 0..k {
        let mut v = scaled.column(j).into_owned();
        let rank = pivots.len();
        if rank > 0 {
            let basis = q.columns(0, rank);
            for _ in 0..2 {
                let h = basis.ad_mul(&v);
                v -= basis * &h;
                for i in 0..rank {
                    r[(i, j)] += h[i];
                }
            }
        }
        let nv = v.norm();
        if nv > tol {
            v /= Complex64::new(nv, 0.0);
            q.set_column(rank, &v);
            r[(rank, j)] = Complex64::new(nv, 0.0);
            pivots.push(j);
        }
    }
    let rank = pivots.len();
    let mut qm = q.columns(0, rank).into_owned();
    let inv: Vec<f64> = sw.iter().map(|s| 1.0 / s).collect();
    scale_rows(&mut qm, &inv);
    Ok(QrFactors { q: Quasimatrix { grid: b.grid.clone(), columns: qm }, r: r.rows(0, rank).into_owned(), pivots })
}

/// `G - Q (Q* G)`: removes the span of an orthonormal `Q` from each column of `G`.
pub fn project_complement(q: &Quasimatrix, g: &Quasimatrix) -> Result<Quasimatrix> {
    if !same_grid(&q.grid, &g.grid) {
        return Err(Error::GridMismatch);
    }
    if q.ncols() == 0 {
        return Ok(g.clone());
    }
    let coeffs = q.adjoint_times(g)?;
    Ok(Quasimatrix { grid: g.grid.clone(), columns: &g.columns - &q.columns * coeffs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn grid_weights_sum_to_width() {
        let g = Grid1D::uniform(-1.0, 1.0, 11).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - 2.0).abs() < 1e-15);
        assert_eq!(g.nodes()[0], -1.0);
        assert_eq!(*g.nodes().last().unwrap(), 1.0);
        assert!(g.nodes().windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid1D::uniform(1.0, -1.0, 5).is_err());
        assert!(Grid1D::uniform(0.0, 1.0, 1).is_err());
        assert!(Grid1D::uniform(0.0, f64::INFINITY, 5).is_err());
    }

    #[test]
    fn plane_weights_sum_to_area() {
        let g = Grid::from_plane(Grid2D::new(
            Grid1D::uniform(-1.0, 1.0, 7).unwrap(),
            Grid1D::uniform(0.0, 3.0, 5).unwrap(),
        ));
        let s: f64 = g.weights().iter().sum();
        assert!((s - 6.0).abs() < 1e-14);
    }

    #[test]
    fn inner_product_of_constants_is_domain_measure() {
        let g = Grid::interval(-1.0, 1.0, 101).unwrap();
        let one = GridFunction::from_fn_1d(g.clone(), |_| 1.0).unwrap();
        let ip = inner_product(&one, &one).unwrap();
        assert!((ip.re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn odd_function_is_orthogonal_to_constant() {
        let g = Grid::interval(-1.0, 1.0, 201).unwrap();
        let x = GridFunction::from_fn_1d(g.clone(), |x| x).unwrap();
        let one = GridFunction::from_fn_1d(g, |_| 1.0).unwrap();
        assert!(inner_product(&x, &one).unwrap().norm() < 1e-14);
    }

    #[test]
    fn sine_squared_integrates_to_one() {
        let g = Grid::interval(-1.0, 1.0, 1001).unwrap();
        let s = GridFunction::from_fn_1d(g, |x| (PI * x).sin()).unwrap();
        let ip = inner_product(&s, &s).unwrap();
        assert!((ip.re - 1.0).abs() < 1e-5);
    }

    #[test]
    fn linear_functions_are_integrated_exactly() {
        let g = Grid::interval(0.0, 3.0, 7).unwrap();
        let u = GridFunction::from_fn_1d(g.clone(), |x| 2.0 * x - 1.0).unwrap();
        let one = GridFunction::from_fn_1d(g, |_| 1.0).unwrap();
        // ∫_0^3 (2x - 1) dx = 6
        assert!((inner_product(&one, &u).unwrap().re - 6.0).abs() < 1e-13);
    }

    #[test]
    fn inner_product_is_conjugate_linear_in_first_argument() {
        let g = Grid::interval(0.0, 1.0, 5).unwrap();
        let u = GridFunction::from_fn_1d(g.clone(), |x| x + 1.0).unwrap();
        let v = GridFunction::from_fn_1d(g, |x| x * x).unwrap();
        let a = Complex64::new(0.3, 2.0);
        let lhs = inner_product(&u.scale(a), &v).unwrap();
        let rhs = a.conj() * inner_product(&u, &v).unwrap();
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let g1 = Grid::interval(-1.0, 1.0, 11).unwrap();
        let g2 = Grid::interval(-1.0, 1.0, 12).unwrap();
        let u = GridFunction::zeros(g1);
        let v = GridFunction::zeros(g2);
        assert!(matches!(inner_product(&u, &v), Err(Error::GridMismatch)));
    }

    #[test]
    fn qr_of_single_column_normalizes() {
        let g = Grid::interval(-1.0, 1.0, 101).unwrap();
        let u = GridFunction::from_fn_1d(g.clone(), |x| 3.0 + x).unwrap();
        let b = Quasimatrix::from_columns(g, std::slice::from_ref(&u)).unwrap();
        let f = qr(&b).unwrap();
        assert_eq!(f.rank(), 1);
        assert!((f.r[(0, 0)].re - u.norm()).abs() < 1e-13);
        let q0 = f.q.column(0);
        for (a, b) in q0.values().iter().zip(u.values().iter()) {
            assert!((a * u.norm() - b).norm() < 1e-12);
        }
    }

    #[test]
    fn qr_of_orthonormal_input_is_identity() {
        let g = Grid::interval(-1.0, 1.0, 401).unwrap();
        let cols: Vec<_> =
            (1..=3).map(|k| GridFunction::from_fn_1d(g.clone(), move |x| (k as f64 * PI * x).sin()).unwrap()).collect();
        let b = Quasimatrix::from_columns(g, &cols).unwrap();
        let q0 = qr(&b).unwrap().q;
        let f = qr(&q0).unwrap();
        let eye = DMatrix::<Complex64>::identity(3, 3);
        assert!((&f.r - eye).norm() < 1e-12);
    }

    #[test]
    fn qr_of_monomials_gives_legendre_directions() {
        // Gram–Schmidt on {1, x} over [-1, 1] by hand: q0 = 1/√2, q1 = x √(3/2).
        let g = Grid::interval(-1.0, 1.0, 2001).unwrap();
        let one = GridFunction::from_fn_1d(g.clone(), |_| 1.0).unwrap();
        let x = GridFunction::from_fn_1d(g.clone(), |x| x).unwrap();
        let b = Quasimatrix::from_columns(g.clone(), &[one, x]).unwrap();
        let f = qr(&b).unwrap();
        let gq = gram(&f.q);
        assert!((gq - DMatrix::<Complex64>::identity(2, 2)).norm() < 1e-10);
        let line = g.as_line().unwrap();
        for (i, &xi) in line.nodes().iter().enumerate() {
            assert!((f.q.matrix()[(i, 0)].re - 1.0 / 2f64.sqrt()).abs() < 1e-12);
            // the quadrature-orthonormal direction matches x√(3/2) to O(h²)
            assert!((f.q.matrix()[(i, 1)].re - xi * 1.5f64.sqrt()).abs() < 1e-5);
        }
    }

    #[test]
    fn qr_drops_dependent_columns() {
        let g = Grid::interval(0.0, 1.0, 51).unwrap();
        let u = GridFunction::from_fn_1d(g.clone(), |x| x.exp()).unwrap();
        let v = GridFunction::from_fn_1d(g.clone(), |x| x.cos()).unwrap();
        let b = Quasimatrix::from_columns(g, &[u.clone(), u.scale(c(2.0)), v]).unwrap();
        let f = qr(&b).unwrap();
        assert_eq!(f.rank(), 2);
        assert_eq!(f.pivots, vec![0, 2]);
        let rebuilt = f.q.times(&f.r).unwrap();
        assert!((rebuilt.matrix() - b.matrix()).norm() < 1e-10 * b.matrix().norm());
    }

    #[test]
    fn qr_rejects_zero_input() {
        let g = Grid::interval(0.0, 1.0, 5).unwrap();
        let b = Quasimatrix::from_columns(g.clone(), &[GridFunction::zeros(g)]).unwrap();
        assert!(qr(&b).is_err());
    }

    #[test]
    fn gram_of_monomials_matches_moments() {
        let g = Grid::interval(-1.0, 1.0, 2001).unwrap();
        let one = GridFunction::from_fn_1d(g.clone(), |_| 1.0).unwrap();
        let x = GridFunction::from_fn_1d(g.clone(), |x| x).unwrap();
        let b = Quasimatrix::from_columns(g, &[one, x]).unwrap();
        let m = gram(&b);
        assert!((m[(0, 0)].re - 2.0).abs() < 1e-12);
        assert!(m[(0, 1)].norm() < 1e-12);
        assert!((m[(1, 1)].re - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn complement_of_q_itself_vanishes() {
        let g = Grid::interval(-1.0, 1.0, 101).unwrap();
        let cols: Vec<_> = (0..3).map(|k| GridFunction::from_fn_1d(g.clone(), move |x| x.powi(k)).unwrap()).collect();
        let q = qr(&Quasimatrix::from_columns(g, &cols).unwrap()).unwrap().q;
        let p = project_complement(&q, &q).unwrap();
        assert!(p.matrix().norm() < 1e-12);
    }

    #[test]
    fn complement_leaves_orthogonal_columns_alone() {
        let g = Grid::interval(-1.0, 1.0, 101).unwrap();
        let even = GridFunction::from_fn_1d(g.clone(), |x| 1.0 + x * x).unwrap();
        let odd = GridFunction::from_fn_1d(g.clone(), |x| x.powi(3)).unwrap();
        let q = qr(&Quasimatrix::from_columns(g.clone(), &[even]).unwrap()).unwrap().q;
        let gq = Quasimatrix::from_columns(g, &[odd]).unwrap();
        let p = project_complement(&q, &gq).unwrap();
        assert!((p.matrix() - gq.matrix()).norm() < 1e-14);
    }
}
