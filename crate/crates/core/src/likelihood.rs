//! Gaussian negative log-likelihood of a DMC residual, its score and the
//! Fisher information, in the unconstrained parametrisation
//!
//! ```text
//! eta = [log delta1_1, log delta2_1, delta3_1, ..., log delta1_m, log delta2_m, delta3_m, log alpha0]
//! ```
//!
//! With `R(eta) = sum_i Sigma(mode_i) + alpha0 I` and the sample covariance
//! `S = (1/M) sum_k r_k r_k^H`:
//!
//! ```text
//! nll(eta)     = M [log det R + Tr(R^-1 S)]
//! score_a      = M [Tr(R^-1 D_a) - Tr(R^-1 S R^-1 D_a)]
//! fim_ab       = M Tr(R^-1 D_a R^-1 D_b)
//! ```
//!
//! where `D_a = dR / d eta_a`. Every `D_a` is Hermitian Toeplitz, which the
//! evaluation exploits through lag sums and FFT row products.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{DmcError, Result};
use crate::gemm;
use crate::linalg::{Cholesky, HermitianMatrix, Toeplitz, ToeplitzRowProduct, C64};
use crate::model::{ChannelObservation, DmcModel, ModeParams};

/// Packed unconstrained parameter vector of length `3m + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EtaVector(Vec<f64>);

impl EtaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() % 3 != 1 {
            return Err(DmcError::InvalidDim(format!("eta must have length 3m + 1, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DmcError::param("eta contains non-finite entries"));
        }
        Ok(Self(values))
    }

    pub fn order(&self) -> usize {
        self.0.len() / 3
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn log_alpha0(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// `(log delta1, log delta2, delta3)` of mode `i`, in packing order.
    pub fn mode(&self, i: usize) -> (f64, f64, f64) {
        (self.0[3 * i], self.0[3 * i + 1], self.0[3 * i + 2])
    }

    /// Index of the `delta3` entry of mode `i`.
    pub fn delay_index(i: usize) -> usize {
        3 * i + 2
    }

    /// Wraps every `delta3` entry into `[0, 1)`.
    pub fn wrapped(mut self) -> Self {
        for i in 0..self.order() {
            let k = Self::delay_index(i);
            self.0[k] = crate::model::wrap_unit(self.0[k]);
        }
        self
    }

    /// Concatenates per-mode triples and a shared noise floor.
    pub fn from_parts(modes: &[(f64, f64, f64)], log_alpha0: f64) -> Result<Self> {
        let mut v = Vec::with_capacity(3 * modes.len() + 1);
        for (a, b, c) in modes {
            v.extend_from_slice(&[*a, *b, *c]);
        }
        v.push(log_alpha0);
        Self::new(v)
    }
}

/// Packs a model into `eta` (canonical mode order).
pub fn reparam_pack(model: &DmcModel) -> EtaVector {
    let mut v = Vec::with_capacity(3 * model.order() + 1);
    for m in model.modes() {
        v.extend_from_slice(&[m.log_delta1(), m.log_delta2(), m.delta3()]);
    }
    v.push(model.alpha0().ln());
    EtaVector(v)
}

/// Unpacks `eta` into a canonical model, wrapping delays modulo 1.
pub fn reparam_unpack(eta: &EtaVector, n_f: usize) -> Result<DmcModel> {
    let modes = (0..eta.order())
        .map(|i| {
            let (a, b, c) = eta.mode(i);
            ModeParams::from_log(a, b, c)
        })
        .collect::<Result<Vec<_>>>()?;
    DmcModel::new(modes, eta.log_alpha0().exp(), n_f)
}

/// Sample covariance of a residual, kept together with a factor
/// `G` (`n x k`, column-major) such that `S = G G^H`.
#[derive(Clone, Debug)]
pub struct SufficientStats {
    sample_covariance: HermitianMatrix,
    m_snapshots: usize,
    factor: Vec<C64>,
    rank: usize,
}

impl SufficientStats {
    pub fn from_observation(obs: &ChannelObservation) -> Self {
        let (n, m) = (obs.n_f(), obs.m_snapshots());
        let y = obs.columns();
        let yc: Vec<C64> = y.iter().map(|z| z.conj()).collect();
        let mut s = vec![C64::new(0.0, 0.0); n * n];
        // S[i][j] = sum_k y[i,k] conj(y[j,k])
        gemm::zgemm(n, m, n, y, (1, n), &yc, (n, 1), &mut s, (n, 1));
        let inv_m = 1.0 / m as f64;
        let sample_covariance = HermitianMatrix::from_lower_fn(n, |i, j| s[i * n + j] * inv_m);
        if m <= n {
            let scale = inv_m.sqrt();
            let factor = y.iter().map(|z| z * scale).collect();
            Self { sample_covariance, m_snapshots: m, factor, rank: m }
        } else {
            Self::from_covariance(sample_covariance, m)
        }
    }

    /// Builds the statistics from a sample covariance alone; the factor is
    /// obtained from a Hermitian eigendecomposition.
    pub fn from_covariance(sample_covariance: HermitianMatrix, m_snapshots: usize) -> Self {
        let n = sample_covariance.dim();
        let a = DMatrix::from_fn(n, n, |i, j| sample_covariance[(i, j)]);
        let eig = SymmetricEigen::new(a);
        let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let mut factor = Vec::new();
        let mut rank = 0;
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > top * 1e-14 {
                let s = lambda.sqrt();
                factor.extend(eig.eigenvectors.column(k).iter().map(|z| z * s));
                rank += 1;
            }
        }
        Self { sample_covariance, m_snapshots, factor, rank }
    }

    pub fn sample_covariance(&self) -> &HermitianMatrix {
        &self.sample_covariance
    }

    pub fn m_snapshots(&self) -> usize {
        self.m_snapshots
    }

    pub fn n_f(&self) -> usize {
        self.sample_covariance.dim()
    }

    fn factor_column(&self, k: usize) -> &[C64] {
        let n = self.n_f();
        &self.factor[k * n..(k + 1) * n]
    }
}

/// `R(eta)` as a Toeplitz first column, evaluated without reordering modes.
pub fn covariance_of(eta: &EtaVector, n_f: usize) -> Toeplitz {
    let mut col = vec![C64::new(0.0, 0.0); n_f];
    for i in 0..eta.order() {
        let (la, lb, tau) = eta.mode(i);
        let (d1, d2) = (la.exp(), lb.exp());
        for (l, c) in col.iter_mut().enumerate() {
            *c += mode_lag(d1, d2, tau, l);
        }
    }
    col[0].re += eta.log_alpha0().exp();
    Toeplitz::new(col)
}

fn mode_lag(d1: f64, d2: f64, tau: f64, l: usize) -> C64 {
    let w = 2.0 * PI * l as f64;
    d1 / C64::new(d2, w) * C64::from_polar(1.0, -w * tau)
}

/// `dR / d eta_a` for every entry of `eta`, in packing order.
pub fn covariance_derivatives(eta: &EtaVector, n_f: usize) -> Vec<Toeplitz> {
    let mut out = Vec::with_capacity(eta.len());
    for i in 0..eta.order() {
        let (la, lb, tau) = eta.mode(i);
        let (d1, d2) = (la.exp(), lb.exp());
        let c: Vec<C64> = (0..n_f).map(|l| mode_lag(d1, d2, tau, l)).collect();
        let d_log_power = c.clone();
        let d_log_decay = c.iter().enumerate().map(|(l, v)| -d2 * v / C64::new(d2, 2.0 * PI * l as f64)).collect();
        let d_delay = c.iter().enumerate().map(|(l, v)| C64::new(0.0, -2.0 * PI * l as f64) * v).collect();
        out.push(Toeplitz::new(d_log_power));
        out.push(Toeplitz::new(d_log_decay));
        out.push(Toeplitz::new(d_delay));
    }
    let mut noise = vec![C64::new(0.0, 0.0); n_f];
    noise[0] = C64::new(eta.log_alpha0().exp(), 0.0);
    out.push(Toeplitz::new(noise));
    out
}

fn check_dims(stats: &SufficientStats, eta: &EtaVector) -> Result<()> {
    if stats.n_f() < 2 {
        return Err(DmcError::InvalidDim("n_f must be at least 2".into()));
    }
    if eta.is_empty() {
        return Err(DmcError::InvalidDim("empty eta".into()));
    }
    Ok(())
}

/// `Tr(R^-1 S) = ||L^-1 G||_F^2`.
fn trace_term(chol: &Cholesky, stats: &SufficientStats) -> f64 {
    let mut acc = 0.0;
    for k in 0..stats.rank {
        let mut z = stats.factor_column(k).to_vec();
        chol.solve_lower_in_place(&mut z);
        acc += z.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    acc
}

/// Negative log-likelihood with constants dropped.
pub fn nll(stats: &SufficientStats, eta: &EtaVector) -> Result<f64> {
    check_dims(stats, eta)?;
    let chol = Cholesky::toeplitz(&covariance_of(eta, stats.n_f()))?;
    let m = stats.m_snapshots as f64;
    Ok(m * (chol.log_det() + trace_term(&chol, stats)))
}

/// Reference evaluation straight from the snapshots:
/// `M log det R + sum_k r_k^H R^-1 r_k`.
pub fn nll_from_observation(obs: &ChannelObservation, eta: &EtaVector) -> Result<f64> {
    let chol = Cholesky::toeplitz(&covariance_of(eta, obs.n_f()))?;
    let quad: f64 = obs
        .snapshots()
        .map(|r| {
            let mut z = r.to_vec();
            chol.solve_lower_in_place(&mut z);
            z.iter().map(|v| v.norm_sqr()).sum::<f64>()
        })
        .sum();
    Ok(obs.m_snapshots() as f64 * chol.log_det() + quad)
}

/// `H = R^-1 G` through the explicit inverse.
fn whiten_factor(q: &HermitianMatrix, stats: &SufficientStats) -> Vec<C64> {
    let (n, k) = (stats.n_f(), stats.rank);
    let mut h = vec![C64::new(0.0, 0.0); n * k];
    gemm::zgemm(n, n, k, q.as_slice(), (n, 1), &stats.factor, (1, n), &mut h, (1, n));
    h
}

/// `Tr(R^-1 S) = sum_k g_k^H h_k`.
fn trace_from_whitened(stats: &SufficientStats, h: &[C64]) -> f64 {
    stats.factor.iter().zip(h).map(|(g, h)| g.re * h.re + g.im * h.im).sum()
}

/// Lag sums `p[l] = sum_k sum_i h_k[i + l] conj(h_k[i])` of `H H^H`, by
/// zero-padded FFT autocorrelation of each column.
fn lag_sums_of(h: &[C64], n: usize) -> Vec<C64> {
    let mut planner = FftPlanner::new();
    let (fwd, inv) = (planner.plan_fft_forward(2 * n), planner.plan_fft_inverse(2 * n));
    let mut power = vec![C64::new(0.0, 0.0); 2 * n];
    let mut buf = vec![C64::new(0.0, 0.0); 2 * n];
    for col in h.chunks_exact(n) {
        buf[..n].copy_from_slice(col);
        buf[n..].fill(C64::new(0.0, 0.0));
        fwd.process(&mut buf);
        for (p, x) in power.iter_mut().zip(&buf) {
            p.re += x.norm_sqr();
        }
    }
    inv.process(&mut power);
    let scale = 1.0 / (2 * n) as f64;
    power[..n].iter().map(|v| v * scale).collect()
}

/// Gradient of [`nll`] with respect to `eta`.
pub fn score(stats: &SufficientStats, eta: &EtaVector) -> Result<Vec<f64>> {
    check_dims(stats, eta)?;
    let n = stats.n_f();
    let chol = Cholesky::toeplitz(&covariance_of(eta, n))?;
    let q = chol.toeplitz_inverse();
    let p = lag_sums_of(&whiten_factor(&q, stats), n);
    let q = q.lower_lag_sums();
    let m = stats.m_snapshots as f64;
    Ok(covariance_derivatives(eta, n)
        .iter()
        .map(|d| m * (d.trace_with_lag_sums(&q) - d.trace_with_lag_sums(&p)))
        .collect())
}

/// Fisher information `M Tr(R^-1 D_a R^-1 D_b)`.
pub fn fim(eta: &EtaVector, n_f: usize, m_snapshots: usize) -> Result<DMatrix<f64>> {
    if n_f < 2 {
        return Err(DmcError::InvalidDim("n_f must be at least 2".into()));
    }
    let chol = Cholesky::toeplitz(&covariance_of(eta, n_f))?;
    let q = chol.toeplitz_inverse();
    let derivs = covariance_derivatives(eta, n_f);
    Ok(fim_from_inverse(&q, &derivs, m_snapshots))
}

pub(crate) fn fim_from_inverse(q: &HermitianMatrix, derivs: &[Toeplitz], m_snapshots: usize) -> DMatrix<f64> {
    let n = q.dim();
    let x = ToeplitzRowProduct::new(n).products(q, derivs);
    let p = derivs.len();
    let m = m_snapshots as f64;
    let mut f = DMatrix::zeros(p, p);
    // Re Tr(X_a X_b) = sum_ij Re(X_a[i,j] X_b[j,i]), tiled so the strided
    // reads of X_b stay in cache
    const TILE: usize = 32;
    for i0 in (0..n).step_by(TILE) {
        let i1 = (i0 + TILE).min(n);
        for j0 in (0..n).step_by(TILE) {
            let j1 = (j0 + TILE).min(n);
            for a in 0..p {
                for b in a..p {
                    let mut acc = 0.0;
                    for i in i0..i1 {
                        let row = &x[a][i * n + j0..i * n + j1];
                        for (u, j) in row.iter().zip(j0..j1) {
                            let w = x[b][j * n + i];
                            acc += u.re * w.re - u.im * w.im;
                        }
                    }
                    f[(a, b)] += acc;
                }
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            f[(a, b)] *= m;
            f[(b, a)] = f[(a, b)];
        }
    }
    f
}

/// Everything one damped-Newton iteration needs, sharing one factorisation.
pub struct Evaluation {
    pub nll: f64,
    pub score: Vec<f64>,
    pub fim: DMatrix<f64>,
}

pub fn evaluate(stats: &SufficientStats, eta: &EtaVector) -> Result<Evaluation> {
    check_dims(stats, eta)?;
    let n = stats.n_f();
    let chol = Cholesky::toeplitz(&covariance_of(eta, n))?;
    let m = stats.m_snapshots as f64;
    let q = chol.toeplitz_inverse();
    let h = whiten_factor(&q, stats);
    let nll = m * (chol.log_det() + trace_from_whitened(stats, &h));
    let q_lags = q.lower_lag_sums();
    let p = lag_sums_of(&h, n);
    let derivs = covariance_derivatives(eta, n);
    let score = derivs.iter().map(|d| m * (d.trace_with_lag_sums(&q_lags) - d.trace_with_lag_sums(&p))).collect();
    let fim = fim_from_inverse(&q, &derivs, stats.m_snapshots);
    Ok(Evaluation { nll, score, fim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_observation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_eta(rng: &mut ChaCha8Rng, m: usize) -> EtaVector {
        let modes: Vec<(f64, f64, f64)> = (0..m)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-0.5..2.5), rng.random_range(0.0..1.0)))
            .collect();
        EtaVector::from_parts(&modes, rng.random_range(-4.0..-1.0)).unwrap()
    }

    fn random_stats(rng: &mut ChaCha8Rng, n: usize, m: usize) -> SufficientStats {
        let eta = random_eta(rng, 2);
        let model = reparam_unpack(&eta, n).unwrap();
        let obs = sample_observation(&model, m, rng.random()).unwrap();
        SufficientStats::from_observation(&obs)
    }

    #[test]
    fn noise_only_closed_form() {
        let (n, m, c) = (8, 5, 2.5);
        let s = HermitianMatrix::from_lower_fn(n, |i, j| C64::new(if i == j { c } else { 0.0 }, 0.0));
        let stats = SufficientStats::from_covariance(s, m);
        let eta = EtaVector::new(vec![c.ln()]).unwrap();
        let v = nll(&stats, &eta).unwrap();
        let expect = (m * n) as f64 * (c.ln() + 1.0);
        assert!((v - expect).abs() < 1e-10 * expect.abs());
    }

    #[test]
    fn scaling_sample_covariance_raises_nll() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stats = random_stats(&mut rng, 12, 6);
        let eta = random_eta(&mut rng, 1);
        let base = nll(&stats, &eta).unwrap();
        let mut scaled = stats.sample_covariance().clone();
        let n = scaled.dim();
        scaled = HermitianMatrix::from_lower_fn(n, |i, j| scaled[(i, j)] * 1.5);
        let bigger = nll(&SufficientStats::from_covariance(scaled, 6), &eta).unwrap();
        assert!(bigger > base);
    }

    #[test]
    fn noise_floor_minimiser() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stats = random_stats(&mut rng, 10, 40);
        let closed = stats.sample_covariance().trace() / 10.0;
        // golden-section search over log alpha0 as the independent route
        let f = |x: f64| nll(&stats, &EtaVector::new(vec![x]).unwrap()).unwrap();
        let (mut a, mut b) = (closed.ln() - 3.0, closed.ln() + 3.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let numeric = (0.5 * (a + b)).exp();
        assert!((numeric - closed).abs() < 1e-6 * closed);
        let s = score(&stats, &EtaVector::new(vec![closed.ln()]).unwrap()).unwrap();
        assert!(s[0].abs() < 1e-8 * f(closed.ln()).abs());
    }

    #[test]
    fn sufficient_statistics_pathway_matches_raw() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [4, 30] {
            let eta_true = random_eta(&mut rng, 2);
            let obs = sample_observation(&reparam_unpack(&eta_true, 16).unwrap(), m, 9).unwrap();
            let stats = SufficientStats::from_observation(&obs);
            let eta = random_eta(&mut rng, 1);
            let a = nll(&stats, &eta).unwrap();
            let b = nll_from_observation(&obs, &eta).unwrap();
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "M={m}: {a} vs {b}");
        }
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let stats = random_stats(&mut rng, 16, 8);
            let eta = random_eta(&mut rng, 2);
            let g = score(&stats, &eta).unwrap();
            let h = 1e-5;
            for a in 0..eta.len() {
                let mut up = eta.as_slice().to_vec();
                let mut dn = up.clone();
                up[a] += h;
                dn[a] -= h;
                let fd = (nll(&stats, &EtaVector(up)).unwrap() - nll(&stats, &EtaVector(dn)).unwrap()) / (2.0 * h);
                let rel = (g[a] - fd).abs() / fd.abs().max(1e-3);
                assert!(rel < 1e-4, "param {a}: analytic {} fd {fd}", g[a]);
            }
        }
    }

    #[test]
    fn absent_mode_power_gradient_is_positive() {
        let n = 16;
        let present = EtaVector::from_parts(&[(0.0, 1.5, 0.2)], -3.0).unwrap();
        let s = covariance_of(&present, n).to_hermitian();
        let stats = SufficientStats::from_covariance(s, 10);
        let eta = EtaVector::from_parts(&[(0.0, 1.5, 0.2), (-2.0, 1.5, 0.7)], -3.0).unwrap();
        let g = score(&stats, &eta).unwrap();
        assert!(g[3] > 0.0, "log delta1 score of absent mode: {}", g[3]);
    }

    #[test]
    fn fim_noise_only_and_symmetry() {
        let f = fim(&EtaVector::new(vec![0.7]).unwrap(), 12, 9).unwrap();
        assert!((f[(0, 0)] - 9.0 * 12.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eta = random_eta(&mut rng, 3);
        let f = fim(&eta, 16, 4).unwrap();
        assert_eq!(f.clone(), f.transpose());
        let eig = SymmetricEigen::new(f.clone()).eigenvalues;
        let max = eig.iter().copied().fold(f64::MIN, f64::max);
        let min = eig.iter().copied().fold(f64::MAX, f64::min);
        assert!(min >= -1e-8 * max);
    }

    #[test]
    fn fim_matches_dense_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let eta = random_eta(&mut rng, 1);
        let n = 10;
        let f = fim(&eta, n, 3).unwrap();
        let q = Cholesky::dense(&covariance_of(&eta, n).to_hermitian()).unwrap().inverse();
        let d: Vec<HermitianMatrix> = covariance_derivatives(&eta, n).iter().map(|t| t.to_hermitian()).collect();
        let mul = |a: &[C64], b: &[C64]| -> Vec<C64> {
            let mut c = vec![C64::new(0.0, 0.0); n * n];
            for i in 0..n {
                for k in 0..n {
                    for j in 0..n {
                        c[i * n + j] += a[i * n + k] * b[k * n + j];
                    }
                }
            }
            c
        };
        for a in 0..eta.len() {
            for b in 0..eta.len() {
                let xa = mul(q.as_slice(), d[a].as_slice());
                let xb = mul(q.as_slice(), d[b].as_slice());
                let expect = 3.0 * crate::linalg::trace_of_product(&xa, &xb, n).re;
                assert!((f[(a, b)] - expect).abs() < 1e-9 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn evaluate_agrees_with_separate_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stats = random_stats(&mut rng, 16, 20);
        let eta = random_eta(&mut rng, 2);
        let e = evaluate(&stats, &eta).unwrap();
        assert!((e.nll - nll(&stats, &eta).unwrap()).abs() < 1e-9 * e.nll.abs());
        for (a, b) in e.score.iter().zip(score(&stats, &eta).unwrap()) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
        assert!((e.fim - fim(&eta, 16, 20).unwrap()).abs().max() < 1e-6);
    }

    #[test]
    fn pack_unpack() {
        let model = DmcModel::new(vec![ModeParams::new(1.0, 3.0, 0.4).unwrap()], 0.5, 8).unwrap();
        let eta = reparam_pack(&model);
        assert_eq!(eta.as_slice()[0], 0.0);
        let wrapped = EtaVector::from_parts(&[(0.0, 3f64.ln(), 1.4)], 0.5f64.ln()).unwrap();
        let back = reparam_unpack(&wrapped, 8).unwrap();
        assert!((back.modes()[0].delta3() - 0.4).abs() < 1e-12);
        assert!(EtaVector::new(vec![0.0, f64::NAN, 0.1, 0.0]).is_err());
        assert!(EtaVector::new(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn pack_unpack_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let m = rng.random_range(0..=3);
            let modes = (0..m)
                .map(|_| {
                    ModeParams::new(
                        10f64.powf(rng.random_range(-8.0..2.0)),
                        10f64.powf(rng.random_range(-2.0..3.0)),
                        rng.random_range(0.0..1.0),
                    )
                    .unwrap()
                })
                .collect();
            let model = DmcModel::new(modes, 10f64.powf(rng.random_range(-10.0..1.0)), 8).unwrap();
            let back = reparam_unpack(&reparam_pack(&model), 8).unwrap();
            let rel = |a: f64, b: f64| ((a - b) / b).abs();
            assert!(rel(back.alpha0(), model.alpha0()) < 1e-14);
            for (x, y) in back.modes().iter().zip(model.modes()) {
                assert!(rel(x.delta1(), y.delta1()) < 1e-14);
                assert!(rel(x.delta2(), y.delta2()) < 1e-14);
                assert_eq!(x.delta3(), y.delta3());
            }
        }
    }

    #[test]
    fn reparametrised_nll_matches_linear_model() {
        let model = DmcModel::new(vec![ModeParams::new(2.0, 5.0, 0.3).unwrap()], 0.1, 12).unwrap();
        let obs = sample_observation(&model, 7, 1).unwrap();
        let stats = SufficientStats::from_observation(&obs);
        let via_eta = nll(&stats, &reparam_pack(&model)).unwrap();
        let r = crate::model::build_full_covariance(&model).unwrap();
        let chol = Cholesky::dense(&r).unwrap();
        let q = chol.inverse();
        let linear = 7.0 * (chol.log_det() + q.trace_product(stats.sample_covariance().as_slice()).re);
        assert!((via_eta - linear).abs() < 1e-10 * linear.abs());
    }

    #[test]
    fn eta_json_is_an_array() {
        let eta = EtaVector::new(vec![1.0, 2.0, 0.5, -1.0]).unwrap();
        assert_eq!(serde_json::to_string(&eta).unwrap(), "[1.0,2.0,0.5,-1.0]");
    }
}
