//! Direct solvers for banded complex systems and small dense helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// General band matrix with `kl` sub- and `ku` super-diagonals, stored in
/// column-major band layout with `kl` extra rows for pivoting fill-in.
///
/// Entry `A(i, j)` lives at `ab[kv + i - j + j * ldab]` where `kv = kl + ku`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<Complex64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self { n, kl, ku, ldab, ab: vec![ZERO; ldab * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        self.kl + self.ku + i - j + j * self.ldab
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i <= j + self.kl && j <= i + self.ku
    }

    /// Adds `v` to `A(i, j)`; the entry must lie inside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: Complex64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside the band");
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if self.in_band(i, j) {
            self.ab[self.idx(i, j)]
        } else {
            ZERO
        }
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![ZERO; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for i in lo..=hi {
                y[i] += self.ab[self.idx(i, j)] * x[j];
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// LU factorization with partial pivoting.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        let kv = kl + ku;
        let ldab = self.ldab;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        let ab = &mut self.ab;
        let at = |i: usize, j: usize| kv + i - j + j * ldab;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = -1.0;
            for p in 0..=km {
                let a = ab[at(j + p, j)].norm();
                if a > best {
                    best = a;
                    jp = p;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(Error::Singular(format!("zero pivot in column {j}")));
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    ab.swap(at(j, c), at(j + jp, c));
                }
            }
            if km > 0 {
                let inv = ab[at(j, j)].inv();
                let base = at(j + 1, j);
                for z in &mut ab[base..base + km] {
                    *z *= inv;
                }
                for c in j + 1..=ju {
                    let t = ab[at(j, c)];
                    if t == ZERO {
                        continue;
                    }
                    let src = at(j + 1, j);
                    let dst = at(j + 1, c);
                    for p in 0..km {
                        let l = ab[src + p];
                        ab[dst + p] -= l * t;
                    }
                }
            }
        }
        Ok(BandLu { a: self, ipiv })
    }
}

/// Factored band matrix `P A = L U`.
#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn n(&self) -> usize {
        self.a.n
    }

    /// Overwrites `b` with `A⁻¹ b`.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let BandMatrix { n, kl, ku, ldab, ref ab } = self.a;
        assert_eq!(b.len(), n);
        let kv = kl + ku;
        let at = |i: usize, j: usize| kv + i - j + j * ldab;
        for j in 0..n.saturating_sub(1) {
            let km = kl.min(n - 1 - j);
            let l = self.ipiv[j];
            if l != j {
                b.swap(l, j);
            }
            let bj = b[j];
            if bj != ZERO {
                let base = at(j + 1, j);
                for p in 0..km {
                    b[j + 1 + p] -= ab[base + p] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= ab[at(j, j)];
            let bj = b[j];
            if bj != ZERO {
                let lo = j.saturating_sub(kv);
                let base = at(lo, j);
                for (off, i) in (lo..j).enumerate() {
                    b[i] -= ab[base + off] * bj;
                }
            }
        }
    }

    /// Overwrites `b` with `A⁻ᴴ b`.
    pub fn solve_adjoint_in_place(&self, b: &mut [Complex64]) {
        let BandMatrix { n, kl, ku, ldab, ref ab } = self.a;
        assert_eq!(b.len(), n);
        let kv = kl + ku;
        let at = |i: usize, j: usize| kv + i - j + j * ldab;
        for j in 0..n {
            let lo = j.saturating_sub(kv);
            let base = at(lo, j);
            let mut s = b[j];
            for (off, i) in (lo..j).enumerate() {
                s -= ab[base + off].conj() * b[i];
            }
            b[j] = s / ab[at(j, j)].conj();
        }
        for j in (0..n.saturating_sub(1)).rev() {
            let km = kl.min(n - 1 - j);
            let base = at(j + 1, j);
            let mut s = b[j];
            for p in 0..km {
                s -= ab[base + p].conj() * b[j + 1 + p];
            }
            b[j] = s;
            let l = self.ipiv[j];
            if l != j {
                b.swap(l, j);
            }
        }
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_adjoint(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = b.to_vec();
        self.solve_adjoint_in_place(&mut x);
        x
    }
}

/// Tridiagonal matrix with two corner entries, `A(0, n-1)` and `A(n-1, 0)`,
/// solved by Sherman–Morrison around a tridiagonal band LU.
#[derive(Debug, Clone)]
pub struct CyclicTridiagonal {
    lu: BandLu,
    v_last: Complex64,
    z: Vec<Complex64>,
    denom: Complex64,
}

impl CyclicTridiagonal {
    /// `lower[i] = A(i+1, i)`, `diag[i] = A(i, i)`, `upper[i] = A(i, i+1)`,
    /// `top_right = A(0, n-1)`, `bottom_left = A(n-1, 0)`; requires `n >= 3`.
    pub fn new(
        lower: &[Complex64],
        diag: &[Complex64],
        upper: &[Complex64],
        top_right: Complex64,
        bottom_left: Complex64,
    ) -> Result<Self> {
        let n = diag.len();
        if n < 3 || lower.len() != n - 1 || upper.len() != n - 1 {
            return Err(Error::invalid("cyclic tridiagonal system needs n >= 3 and consistent bands"));
        }
        let gamma = -diag[0];
        if gamma == ZERO {
            return Err(Error::Singular("zero leading diagonal entry".into()));
        }
        let mut t = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            t.add(i, i, diag[i]);
        }
        for i in 0..n - 1 {
            t.add(i + 1, i, lower[i]);
            t.add(i, i + 1, upper[i]);
        }
        t.add(0, 0, -gamma);
        t.add(n - 1, n - 1, -top_right * bottom_left / gamma);
        let lu = t.factor()?;
        // A = T + u vᵀ with u = (γ, 0, …, 0, bottom_left), v = (1, 0, …, 0, top_right/γ)
        let mut u = vec![ZERO; n];
        u[0] = gamma;
        u[n - 1] = bottom_left;
        let v_last = top_right / gamma;
        let z = lu.solve(&u);
        let denom = Complex64::new(1.0, 0.0) + z[0] + v_last * z[n - 1];
        if denom.norm() < 1e-300 {
            return Err(Error::Singular("Sherman–Morrison denominator vanished".into()));
        }
        Ok(Self { lu, v_last, z, denom })
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = b.len();
        self.lu.solve_in_place(b);
        let f = (b[0] + self.v_last * b[n - 1]) / self.denom;
        for (bi, zi) in b.iter_mut().zip(&self.z) {
            *bi -= f * zi;
        }
    }
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn symmetric_eigenvalues_desc(m: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Eigenvalues of a Hermitian matrix in descending order.
pub fn hermitian_eigenvalues_desc(m: DMatrix<Complex64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// `D^{1/2} M D^{1/2}` for a diagonal `D` given by its entries.
pub fn weight_symmetric(m: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let s: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| s[i] * m[(i, j)] * s[j])
}

/// Singular values of a real matrix in descending order.
pub fn singular_values_desc(m: DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn to_complex(v: &DVector<f64>) -> DVector<Complex64> {
    v.map(|x| Complex64::new(x, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> BandMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = BandMatrix::zeros(n, kl, ku);
        for j in 0..n {
            for i in j.saturating_sub(ku)..=(j + kl).min(n - 1) {
                let v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                a.add(i, j, v);
            }
        }
        a
    }

    fn random_vec(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn band_solve_matches_dense_lu() {
        let a = random_band(40, 3, 2, 1);
        let dense = a.to_dense();
        let b = random_vec(40, 2);
        let x = a.clone().factor().unwrap().solve(&b);
        let xd = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        assert!(max_diff(&x, xd.as_slice()) < 1e-9);
    }

    #[test]
    fn adjoint_solve_matches_dense() {
        let a = random_band(35, 2, 4, 3);
        let dense_h = a.to_dense().adjoint();
        let b = random_vec(35, 4);
        let x = a.clone().factor().unwrap().solve_adjoint(&b);
        let xd = dense_h.lu().solve(&DVector::from_vec(b)).unwrap();
        assert!(max_diff(&x, xd.as_slice()) < 1e-9);
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [[0, 1], [1, 0]] needs a row swap.
        let mut a = BandMatrix::zeros(2, 1, 1);
        a.add(0, 1, Complex64::new(1.0, 0.0));
        a.add(1, 0, Complex64::new(1.0, 0.0));
        let b = vec![Complex64::new(2.0, 0.0), Complex64::new(3.0, 0.0)];
        let x = a.factor().unwrap().solve(&b);
        assert!((x[0] - Complex64::new(3.0, 0.0)).norm() < 1e-15);
        assert!((x[1] - Complex64::new(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = BandMatrix::zeros(3, 1, 1);
        assert!(matches!(a.factor(), Err(Error::Singular(_))));
    }

    #[test]
    fn cyclic_solve_matches_dense() {
        let n = 12;
        let lower = random_vec(n - 1, 5);
        let upper = random_vec(n - 1, 6);
        let mut diag = random_vec(n, 7);
        for d in &mut diag {
            *d += Complex64::new(4.0, 0.0);
        }
        let tr = Complex64::new(0.7, -0.2);
        let bl = Complex64::new(-0.3, 0.5);
        let mut dense = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = diag[i];
        }
        for i in 0..n - 1 {
            dense[(i + 1, i)] = lower[i];
            dense[(i, i + 1)] = upper[i];
        }
        dense[(0, n - 1)] = tr;
        dense[(n - 1, 0)] = bl;
        let cyc = CyclicTridiagonal::new(&lower, &diag, &upper, tr, bl).unwrap();
        let b = random_vec(n, 8);
        let mut x = b.clone();
        cyc.solve_in_place(&mut x);
        let xd = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        assert!(max_diff(&x, xd.as_slice()) < 1e-12);
    }

    #[test]
    fn eigenvalues_come_out_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, -1.0]);
        assert_eq!(symmetric_eigenvalues_desc(m), vec![5.0, 2.0, -1.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn band_lu_residual_is_small(n in 2usize..60, kl in 0usize..5, ku in 0usize..5, seed in any::<u64>()) {
            let mut a = random_band(n, kl, ku, seed);
            for i in 0..n {
                a.add(i, i, Complex64::new(0.5, 0.0));
            }
            let b = random_vec(n, seed ^ 0xabcd);
            if let Ok(lu) = a.clone().factor() {
                let x = lu.solve(&b);
                let r = a.mul_vec(&x);
                let scale = 1.0 + x.iter().map(|z| z.norm()).fold(0.0, f64::max);
                prop_assert!(max_diff(&r, &b) < 1e-8 * scale);
            }
        }
    }
}
