//! Dense and Toeplitz-structured complex linear algebra used by the
//! covariance model, the likelihood and the CRB code.
//!
//! Matrices are stored row-major. Every covariance in this crate is
//! Hermitian Toeplitz, so the hot paths (Cholesky, products with derivative
//! matrices) exploit that structure; the dense routines are kept for general
//! Hermitian inputs and for cross-checking.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{DmcError, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Hermitian matrix with full row-major storage.
///
/// Constructors write both triangles from one source value, so
/// `a[(i, j)] == a[(j, i)].conj()` holds bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    n: usize,
    data: Vec<C64>,
}

impl HermitianMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![ZERO; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    /// Builds the matrix from its lower triangle; the upper triangle is
    /// mirrored and the diagonal imaginary part dropped.
    pub fn from_lower_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut v = f(i, j);
                if i == j {
                    v.im = 0.0;
                }
                m.data[i * n + j] = v;
                m.data[j * n + i] = v.conj();
            }
        }
        m
    }

    /// Wraps full storage, checking exact Hermitian symmetry.
    pub fn from_full(n: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(DmcError::InvalidDim(format!("expected {} entries, got {}", n * n, data.len())));
        }
        for i in 0..n {
            for j in 0..=i {
                if data[i * n + j] != data[j * n + i].conj() {
                    return Err(DmcError::param(format!("entry ({i},{j}) breaks Hermitian symmetry")));
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.data[i * self.n + i].re).sum()
    }

    /// `self + alpha * I`.
    pub fn add_diagonal(&mut self, alpha: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i].re += alpha;
        }
    }

    pub fn add_assign(&mut self, other: &HermitianMatrix) {
        assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// True if every diagonal band is constant (exact comparison).
    pub fn is_toeplitz(&self) -> bool {
        let n = self.n;
        (1..n).all(|i| (1..n).all(|j| self.data[i * n + j] == self.data[(i - 1) * n + j - 1]))
    }

    /// Sums along the sub-diagonals: `p[l] = sum_i a[i + l][i]`.
    pub fn lower_lag_sums(&self) -> Vec<C64> {
        let n = self.n;
        let mut p = vec![ZERO; n];
        for i in 0..n {
            let row = self.row(i);
            for (j, v) in row[..=i].iter().enumerate() {
                p[i - j] += *v;
            }
        }
        p
    }

    /// `Tr(self * other)` for a general square partner.
    pub fn trace_product(&self, other: &[C64]) -> C64 {
        let n = self.n;
        assert_eq!(other.len(), n * n);
        let mut acc = ZERO;
        for i in 0..n {
            for j in 0..n {
                acc += self.data[i * n + j] * other[j * n + i];
            }
        }
        acc
    }

    /// Dense `self * v`.
    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        let n = self.n;
        (0..n).map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }
}

impl std::ops::Index<(usize, usize)> for HermitianMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

/// Hermitian Toeplitz matrix defined by its first column.
///
/// Entry `(i, j)` is `col[i - j]` for `i >= j` and `col[j - i].conj()`
/// otherwise; `col[0]` must be real.
#[derive(Clone, Debug, PartialEq)]
pub struct Toeplitz {
    col: Vec<C64>,
}

impl Toeplitz {
    pub fn new(mut col: Vec<C64>) -> Self {
        assert!(!col.is_empty());
        col[0].im = 0.0;
        Self { col }
    }

    pub fn zeros(n: usize) -> Self {
        Self { col: vec![ZERO; n] }
    }

    pub fn dim(&self) -> usize {
        self.col.len()
    }

    pub fn column(&self) -> &[C64] {
        &self.col
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        if i >= j {
            self.col[i - j]
        } else {
            self.col[j - i].conj()
        }
    }

    pub fn add_assign(&mut self, other: &Toeplitz) {
        assert_eq!(self.dim(), other.dim());
        for (a, b) in self.col.iter_mut().zip(&other.col) {
            *a += *b;
        }
    }

    pub fn add_diagonal(&mut self, alpha: f64) {
        self.col[0].re += alpha;
    }

    pub fn trace(&self) -> f64 {
        self.col[0].re * self.dim() as f64
    }

    pub fn to_hermitian(&self) -> HermitianMatrix {
        HermitianMatrix::from_lower_fn(self.dim(), |i, j| self.col[i - j])
    }

    /// `Tr(T P)` for Hermitian `P` given its lower lag sums.
    pub fn trace_with_lag_sums(&self, lag_sums: &[C64]) -> f64 {
        assert_eq!(lag_sums.len(), self.dim());
        let mut acc = self.col[0].re * lag_sums[0].re;
        for (t, p) in self.col.iter().zip(lag_sums).skip(1) {
            acc += 2.0 * (t * p.conj()).re;
        }
        acc
    }

    /// Dense `T v` in O(n^2).
    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| self.entry(i, j) * v[j]).sum()).collect()
    }
}

/// Lower Cholesky factor `L` with `A = L L^H`, row-major.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<C64>,
}

impl Cholesky {
    /// Standard dense factorisation.
    pub fn dense(a: &HermitianMatrix) -> Result<Self> {
        let n = a.dim();
        let mut l = vec![ZERO; n * n];
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(DmcError::NotPositiveDefinite { pivot: j });
            }
            let djj = d.sqrt();
            l[j * n + j] = C64::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                let (ri, rj) = (i * n, j * n);
                for k in 0..j {
                    s -= l[ri + k] * l[rj + k].conj();
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    /// O(n^2) factorisation of a Hermitian Toeplitz matrix by the
    /// generalised Schur algorithm (hyperbolic rotations on the two
    /// displacement generators).
    pub fn toeplitz(t: &Toeplitz) -> Result<Self> {
        let n = t.dim();
        let c = t.column();
        let c0 = c[0].re;
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(DmcError::NotPositiveDefinite { pivot: 0 });
        }
        let s0 = c0.sqrt();
        let mut u: Vec<C64> = c.iter().map(|z| z / s0).collect();
        let mut v: Vec<C64> = c.iter().map(|z| z / s0).collect();
        u[0] = C64::new(s0, 0.0);
        v[0] = ZERO;
        let mut l = vec![ZERO; n * n];
        for k in 0..n {
            for i in k..n {
                l[i * n + k] = u[i];
            }
            if k + 1 == n {
                break;
            }
            // shift u down by one; entries below k are already zero
            for i in (k + 1..n).rev() {
                u[i] = u[i - 1];
            }
            u[k] = ZERO;
            let pivot = u[k + 1];
            let rho = v[k + 1] / pivot;
            let one_minus = 1.0 - rho.norm_sqr();
            if !(one_minus > 0.0) || !one_minus.is_finite() {
                return Err(DmcError::NotPositiveDefinite { pivot: k + 1 });
            }
            let s = one_minus.sqrt();
            let rho_c = rho.conj();
            for i in k + 1..n {
                let (ui, vi) = (u[i], v[i]);
                u[i] = (ui - rho_c * vi) / s;
                v[i] = (vi - rho * ui) / s;
            }
            v[k + 1] = ZERO;
            u[k + 1].im = 0.0;
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor(&self) -> &[C64] {
        &self.l
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.l[i * self.n + j]
    }

    /// `log det A = 2 sum log L_ii`.
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].re.ln()).sum::<f64>() * 2.0
    }

    /// `L w`.
    pub fn mul_lower(&self, w: &[C64]) -> Vec<C64> {
        let n = self.n;
        (0..n).map(|i| self.l[i * n..i * n + i + 1].iter().zip(w).map(|(a, b)| a * b).sum()).collect()
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [C64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: C64 = row.iter().zip(&b[..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - s) / self.l[i * n + i].re;
        }
    }

    /// Solves `L^H x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [C64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let xi = b[i] / self.l[i * n + i].re;
            b[i] = xi;
            let row = &self.l[i * n..i * n + i];
            for (bj, lij) in b[..i].iter_mut().zip(row) {
                *bj -= lij.conj() * xi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `L^{-1}`, lower triangular, row-major.
    pub fn lower_inverse(&self) -> Vec<C64> {
        let n = self.n;
        let mut inv = vec![ZERO; n * n];
        for i in 0..n {
            let dii = self.l[i * n + i].re;
            inv[i * n + i] = C64::new(1.0 / dii, 0.0);
            for j in 0..i {
                // (L^{-1})_{ij} = -(1/L_ii) sum_{k=j}^{i-1} L_ik (L^{-1})_{kj}
                let mut s = ZERO;
                for k in j..i {
                    s += self.l[i * n + k] * inv[k * n + j];
                }
                inv[i * n + j] = -s / dii;
            }
        }
        inv
    }

    /// `A^{-1} = L^{-H} L^{-1}`.
    pub fn inverse(&self) -> HermitianMatrix {
        let n = self.n;
        let linv = self.lower_inverse();
        let mut q = vec![ZERO; n * n];
        for k in 0..n {
            let row = &linv[k * n..k * n + k + 1];
            for i in 0..=k {
                let a = row[i].conj();
                let qi = &mut q[i * n..i * n + i + 1];
                for (qij, lkj) in qi.iter_mut().zip(&row[..=i]) {
                    *qij += a * lkj;
                }
            }
        }
        HermitianMatrix::from_lower_fn(n, |i, j| q[i * n + j])
    }

    /// Inverse of a factorised Hermitian Toeplitz matrix in O(n^2) by the
    /// Gohberg-Semencul formula. Only valid when the factorised matrix is
    /// Toeplitz.
    pub fn toeplitz_inverse(&self) -> HermitianMatrix {
        let n = self.n;
        let mut e1 = vec![ZERO; n];
        e1[0] = C64::new(1.0, 0.0);
        let x = self.solve(&e1);
        let x0 = x[0].re;
        // T^-1 = (L(x) L(x)^H - L(w) L(w)^H) / x0, w = [0, conj x_{n-1}, ..., conj x_1],
        // so each entry extends its upper-left diagonal neighbour by one term
        let w = |k: usize| if k == 0 { ZERO } else { x[n - k].conj() };
        let mut q = vec![ZERO; n * n];
        for i in 0..n {
            for j in 0..=i {
                let prev = if j > 0 { q[(i - 1) * n + j - 1] } else { ZERO };
                q[i * n + j] = prev + (x[i] * x[j].conj() - w(i) * w(j).conj()) / x0;
            }
            q[i * n + i].im = 0.0;
        }
        for i in 0..n {
            for j in 0..i {
                q[j * n + i] = q[i * n + j].conj();
            }
        }
        HermitianMatrix { n, data: q }
    }
}

/// Factorises a Toeplitz covariance, retrying once with a small diagonal
/// load of `1e-10 * trace / n` when the first attempt fails.
pub fn cholesky_with_jitter(t: &Toeplitz) -> Result<(Cholesky, f64)> {
    match Cholesky::toeplitz(t) {
        Ok(c) => Ok((c, 0.0)),
        Err(_) => {
            let jitter = 1e-10 * t.trace() / t.dim() as f64;
            let mut loaded = t.clone();
            loaded.add_diagonal(jitter);
            Cholesky::toeplitz(&loaded).map(|c| (c, jitter))
        }
    }
}

/// Computes `X = Q T` for a dense `Q` and several Hermitian Toeplitz `T`
/// through zero-padded FFT convolution of each row of `Q`.
pub struct ToeplitzRowProduct {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl ToeplitzRowProduct {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, fwd: planner.plan_fft_forward(2 * n), inv: planner.plan_fft_inverse(2 * n) }
    }

    /// Spectrum of the kernel `g[j - i] = T[i][j]` laid out circularly.
    fn kernel_spectrum(&self, t: &Toeplitz) -> Vec<C64> {
        let n = self.n;
        let mut g = vec![ZERO; 2 * n];
        // T[i][j] with d = j - i: d >= 0 -> conj(col[d]); d < 0 -> col[-d]
        for d in 0..n {
            g[d] = t.column()[d].conj();
        }
        for d in 1..n {
            g[2 * n - d] = t.column()[d];
        }
        self.fwd.process(&mut g);
        g
    }

    /// Returns one row-major `n x n` product per Toeplitz factor.
    pub fn products(&self, q: &HermitianMatrix, factors: &[Toeplitz]) -> Vec<Vec<C64>> {
        let n = self.n;
        assert_eq!(q.dim(), n);
        let kernels: Vec<Vec<C64>> = factors.iter().map(|t| self.kernel_spectrum(t)).collect();
        let scale = 1.0 / (2 * n) as f64;
        let mut rows = vec![ZERO; 2 * n * n];
        for (i, chunk) in rows.chunks_exact_mut(2 * n).enumerate() {
            chunk[..n].copy_from_slice(q.row(i));
        }
        let mut scratch = vec![ZERO; self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len())];
        self.fwd.process_with_scratch(&mut rows, &mut scratch);
        let mut work = vec![ZERO; 2 * n * n];
        let mut out = Vec::with_capacity(factors.len());
        for kernel in &kernels {
            for (w, x) in work.chunks_exact_mut(2 * n).zip(rows.chunks_exact(2 * n)) {
                for ((w, x), g) in w.iter_mut().zip(x).zip(kernel) {
                    *w = x * g;
                }
            }
            self.inv.process_with_scratch(&mut work, &mut scratch);
            let mut x = Vec::with_capacity(n * n);
            for w in work.chunks_exact(2 * n) {
                x.extend(w[..n].iter().map(|v| v * scale));
            }
            out.push(x);
        }
        out
    }
}

/// `Tr(X Y)` for row-major square matrices.
pub fn trace_of_product(x: &[C64], y: &[C64], n: usize) -> C64 {
    let mut acc = ZERO;
    for i in 0..n {
        let xi = &x[i * n..(i + 1) * n];
        for (j, xij) in xi.iter().enumerate() {
            acc += xij * y[j * n + i];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_toeplitz_pd(n: usize, rng: &mut ChaCha8Rng) -> Toeplitz {
        // sum of a few damped complex exponentials plus a floor is PD
        let mut col = vec![ZERO; n];
        for _ in 0..3 {
            let p: f64 = rng.random_range(0.1..2.0);
            let b: f64 = rng.random_range(0.2..3.0);
            let tau: f64 = rng.random();
            for (l, c) in col.iter_mut().enumerate() {
                let lf = l as f64;
                *c += p / C64::new(b, 2.0 * std::f64::consts::PI * lf)
                    * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * lf * tau);
            }
        }
        col[0].re += 0.05;
        Toeplitz::new(col)
    }

    fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn schur_matches_dense_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 5, 17, 64] {
            let t = random_toeplitz_pd(n, &mut rng);
            let fast = Cholesky::toeplitz(&t).unwrap();
            let dense = Cholesky::dense(&t.to_hermitian()).unwrap();
            let scale = t.column()[0].re;
            assert!(max_abs_diff(fast.factor(), dense.factor()) < 1e-10 * scale, "n={n}");
            assert!((fast.log_det() - dense.log_det()).abs() < 1e-9 * n as f64);
        }
    }

    #[test]
    fn schur_rejects_indefinite() {
        let t = Toeplitz::new(vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0), ZERO]);
        assert!(matches!(Cholesky::toeplitz(&t), Err(DmcError::NotPositiveDefinite { .. })));
        assert!(Cholesky::dense(&t.to_hermitian()).is_err());
    }

    #[test]
    fn structured_inverse_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [1, 2, 5, 64] {
            let t = random_toeplitz_pd(n, &mut rng);
            let chol = Cholesky::toeplitz(&t).unwrap();
            let (fast, dense) = (chol.toeplitz_inverse(), chol.inverse());
            let err = max_abs_diff(fast.as_slice(), dense.as_slice());
            assert!(err < 1e-10 * dense.norm(), "n={n} err={err}");
        }
    }

    #[test]
    fn inverse_and_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 12;
        let t = random_toeplitz_pd(n, &mut rng);
        let a = t.to_hermitian();
        let chol = Cholesky::toeplitz(&t).unwrap();
        let q = chol.inverse();
        // A Q = I
        for j in 0..n {
            let col: Vec<C64> = (0..n).map(|i| q[(i, j)]).collect();
            let prod = a.mul_vec(&col);
            for (i, p) in prod.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((p - C64::new(expect, 0.0)).norm() < 1e-9);
            }
        }
        let b: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let x = chol.solve(&b);
        assert!(max_abs_diff(&a.mul_vec(&x), &b) < 1e-9);
        let lw = chol.mul_lower(&b);
        let mut back = lw.clone();
        chol.solve_lower_in_place(&mut back);
        assert!(max_abs_diff(&back, &b) < 1e-10);
    }

    #[test]
    fn lag_sum_trace_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 9;
        let t = random_toeplitz_pd(n, &mut rng);
        let p = random_toeplitz_pd(n, &mut rng).to_hermitian();
        let via_lags = t.trace_with_lag_sums(&p.lower_lag_sums());
        let dense = t.to_hermitian().trace_product(p.as_slice());
        assert!((via_lags - dense.re).abs() < 1e-10);
        assert!(dense.im.abs() < 1e-10);
    }

    #[test]
    fn fft_row_products_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 10;
        let q = random_toeplitz_pd(n, &mut rng).to_hermitian();
        let ts = [random_toeplitz_pd(n, &mut rng), random_toeplitz_pd(n, &mut rng)];
        let prods = ToeplitzRowProduct::new(n).products(&q, &ts);
        for (t, x) in ts.iter().zip(&prods) {
            for i in 0..n {
                for j in 0..n {
                    let expect: C64 = (0..n).map(|k| q[(i, k)] * t.entry(k, j)).sum();
                    assert!((x[i * n + j] - expect).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn jitter_rescues_rounding_level_failure() {
        // rank-one Toeplitz (all ones) is PSD but singular
        let t = Toeplitz::new(vec![C64::new(1.0, 0.0); 4]);
        assert!(Cholesky::toeplitz(&t).is_err());
        let (_, jitter) = cholesky_with_jitter(&t).unwrap();
        assert!(jitter > 0.0 && jitter < 1e-9);
    }
}
