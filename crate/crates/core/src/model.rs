//! Parametric dense-multipath covariance model and synthetic sampling.
//!
//! Frequencies are bin indices `f_i = i` and delays are normalised to
//! `[0, 1)`, so inverse-DFT bin `k` corresponds to delay `k / n_f`. A single
//! mode contributes the Hermitian Toeplitz covariance
//!
//! ```text
//! Sigma[i][j] = delta1 / (delta2 + j 2 pi (i - j)) * exp(-j 2 pi (i - j) delta3)
//! ```
//!
//! and a model with `m` modes adds the mode covariances to `alpha0 I`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DmcError, Result};
use crate::gemm;
use crate::linalg::{cholesky_with_jitter, Cholesky, HermitianMatrix, Toeplitz, C64};

/// Largest model order handled by the pipeline.
pub const MAX_MODES: usize = 3;

/// One DMC mode: power scale, decay rate and base delay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMode")]
pub struct ModeParams {
    delta1: f64,
    delta2: f64,
    delta3: f64,
}

#[derive(Deserialize)]
struct RawMode {
    delta1: f64,
    delta2: f64,
    delta3: f64,
}

impl TryFrom<RawMode> for ModeParams {
    type Error = DmcError;
    fn try_from(r: RawMode) -> Result<Self> {
        ModeParams::new(r.delta1, r.delta2, r.delta3)
    }
}

impl ModeParams {
    pub fn new(delta1: f64, delta2: f64, delta3: f64) -> Result<Self> {
        if !(delta1 > 0.0 && delta1.is_finite()) {
            return Err(DmcError::param(format!("delta1 must be positive and finite, got {delta1}")));
        }
        if !(delta2 > 0.0 && delta2.is_finite()) {
            return Err(DmcError::param(format!("delta2 must be positive and finite, got {delta2}")));
        }
        if !(0.0..1.0).contains(&delta3) {
            return Err(DmcError::param(format!("delta3 must lie in [0, 1), got {delta3}")));
        }
        Ok(Self { delta1, delta2, delta3 })
    }

    /// Builds a mode from log-domain power and decay; `delta3` is wrapped
    /// into `[0, 1)`.
    pub fn from_log(log_delta1: f64, log_delta2: f64, delta3: f64) -> Result<Self> {
        if !(log_delta1.is_finite() && log_delta2.is_finite() && delta3.is_finite()) {
            return Err(DmcError::param("non-finite log-domain mode parameter"));
        }
        Self::new(log_delta1.exp(), log_delta2.exp(), wrap_unit(delta3))
    }

    pub fn delta1(&self) -> f64 {
        self.delta1
    }

    pub fn delta2(&self) -> f64 {
        self.delta2
    }

    pub fn delta3(&self) -> f64 {
        self.delta3
    }

    pub fn log_delta1(&self) -> f64 {
        self.delta1.ln()
    }

    pub fn log_delta2(&self) -> f64 {
        self.delta2.ln()
    }

    /// Peak of the covariance diagonal, `delta1 / delta2`.
    pub fn diagonal_power(&self) -> f64 {
        self.delta1 / self.delta2
    }

    /// First column of the mode covariance: `c[l] = Sigma[l][0]`.
    pub fn toeplitz(&self, n_f: usize) -> Toeplitz {
        Toeplitz::new((0..n_f).map(|l| self.lag_value(l as f64)).collect())
    }

    fn lag_value(&self, lag: f64) -> C64 {
        let w = 2.0 * PI * lag;
        self.delta1 / C64::new(self.delta2, w) * C64::from_polar(1.0, -w * self.delta3)
    }
}

/// Wraps a real number into `[0, 1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// A multi-modal DMC model with a white noise floor.
///
/// Modes are kept in canonical order: ascending `delta3`, ties broken by
/// descending `delta1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct DmcModel {
    alpha0: f64,
    modes: Vec<ModeParams>,
    n_f: usize,
}

#[derive(Deserialize)]
struct RawModel {
    alpha0: f64,
    modes: Vec<ModeParams>,
    n_f: usize,
}

impl TryFrom<RawModel> for DmcModel {
    type Error = DmcError;
    fn try_from(r: RawModel) -> Result<Self> {
        DmcModel::new(r.modes, r.alpha0, r.n_f)
    }
}

impl DmcModel {
    pub fn new(mut modes: Vec<ModeParams>, alpha0: f64, n_f: usize) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(DmcError::param(format!("alpha0 must be positive and finite, got {alpha0}")));
        }
        if n_f < 2 {
            return Err(DmcError::InvalidDim(format!("n_f must be at least 2, got {n_f}")));
        }
        if modes.len() > MAX_MODES {
            return Err(DmcError::param(format!("at most {MAX_MODES} modes supported, got {}", modes.len())));
        }
        canonical_sort(&mut modes);
        Ok(Self { alpha0, modes, n_f })
    }

    pub fn noise_only(alpha0: f64, n_f: usize) -> Result<Self> {
        Self::new(Vec::new(), alpha0, n_f)
    }

    pub fn modes(&self) -> &[ModeParams] {
        &self.modes
    }

    pub fn order(&self) -> usize {
        self.modes.len()
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn n_f(&self) -> usize {
        self.n_f
    }

    /// Same model with a different noise floor.
    pub fn with_alpha0(&self, alpha0: f64) -> Result<Self> {
        Self::new(self.modes.clone(), alpha0, self.n_f)
    }

    /// `Sigma_m + alpha0 I` as a Toeplitz first column.
    pub fn covariance_toeplitz(&self) -> Toeplitz {
        let mut t = Toeplitz::zeros(self.n_f);
        for mode in &self.modes {
            t.add_assign(&mode.toeplitz(self.n_f));
        }
        t.add_diagonal(self.alpha0);
        t
    }

    /// Factorises the full covariance, loading the diagonal once by
    /// `1e-10 * trace / n_f` if the plain factorisation fails. Returns the
    /// covariance actually factorised.
    pub fn factorize(&self) -> Result<(Toeplitz, Cholesky)> {
        let mut t = self.covariance_toeplitz();
        let (chol, jitter) = cholesky_with_jitter(&t)?;
        if jitter > 0.0 {
            log::debug!("covariance needed diagonal loading of {jitter:e}");
            t.add_diagonal(jitter);
        }
        Ok((t, chol))
    }
}

pub(crate) fn canonical_sort(modes: &mut [ModeParams]) {
    modes.sort_by(|a, b| a.delta3.total_cmp(&b.delta3).then_with(|| b.delta1.total_cmp(&a.delta1)));
}

/// Covariance of a single mode.
pub fn build_mode_covariance(delta: &ModeParams, n_f: usize) -> Result<HermitianMatrix> {
    if n_f < 2 {
        return Err(DmcError::InvalidDim(format!("n_f must be at least 2, got {n_f}")));
    }
    ModeParams::new(delta.delta1, delta.delta2, delta.delta3)?;
    Ok(delta.toeplitz(n_f).to_hermitian())
}

/// `sum_i Sigma(modes[i]) + alpha0 I`, checked for positive definiteness.
pub fn build_full_covariance(model: &DmcModel) -> Result<HermitianMatrix> {
    let (t, _) = model.factorize()?;
    Ok(t.to_hermitian())
}

/// Complex `n_f x M` frequency-domain observation; snapshots are columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelObservation {
    n_f: usize,
    m_snapshots: usize,
    // column-major: snapshot k occupies data[k * n_f .. (k + 1) * n_f]
    data: Vec<C64>,
}

impl ChannelObservation {
    /// Wraps column-major data.
    pub fn from_columns(n_f: usize, m_snapshots: usize, data: Vec<C64>) -> Result<Self> {
        if n_f == 0 || m_snapshots == 0 {
            return Err(DmcError::InvalidDim("observation must be non-empty".into()));
        }
        if data.len() != n_f * m_snapshots {
            return Err(DmcError::InvalidDim(format!("expected {} samples, got {}", n_f * m_snapshots, data.len())));
        }
        Ok(Self { n_f, m_snapshots, data })
    }

    /// Wraps row-major `[n_f][M]` data.
    pub fn from_rows(n_f: usize, m_snapshots: usize, rows: &[C64]) -> Result<Self> {
        if rows.len() != n_f * m_snapshots {
            return Err(DmcError::InvalidDim(format!("expected {} samples, got {}", n_f * m_snapshots, rows.len())));
        }
        let mut data = vec![C64::new(0.0, 0.0); rows.len()];
        for i in 0..n_f {
            for k in 0..m_snapshots {
                data[k * n_f + i] = rows[i * m_snapshots + k];
            }
        }
        Self::from_columns(n_f, m_snapshots, data)
    }

    pub fn from_snapshots(snapshots: &[Vec<C64>]) -> Result<Self> {
        let n_f = snapshots.first().map_or(0, Vec::len);
        if snapshots.iter().any(|s| s.len() != n_f) {
            return Err(DmcError::InvalidDim("snapshots differ in length".into()));
        }
        Self::from_columns(n_f, snapshots.len(), snapshots.concat())
    }

    pub fn n_f(&self) -> usize {
        self.n_f
    }

    pub fn m_snapshots(&self) -> usize {
        self.m_snapshots
    }

    pub fn snapshot(&self, k: usize) -> &[C64] {
        &self.data[k * self.n_f..(k + 1) * self.n_f]
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &[C64]> {
        self.data.chunks_exact(self.n_f)
    }

    pub fn columns(&self) -> &[C64] {
        &self.data
    }

    pub fn get(&self, i: usize, k: usize) -> C64 {
        self.data[k * self.n_f + i]
    }

    /// Row-major `[n_f][M]` copy, the on-disk layout.
    pub fn to_rows(&self) -> Vec<C64> {
        let mut rows = vec![C64::new(0.0, 0.0); self.data.len()];
        for k in 0..self.m_snapshots {
            for i in 0..self.n_f {
                rows[i * self.m_snapshots + k] = self.data[k * self.n_f + i];
            }
        }
        rows
    }

    /// Multiplies every sample by a real factor.
    pub fn scaled(&self, c: f64) -> Self {
        Self { data: self.data.iter().map(|z| z * c).collect(), ..self.clone() }
    }

    /// Adds the same vector to every snapshot.
    pub fn add_to_each(&mut self, v: &[C64]) {
        assert_eq!(v.len(), self.n_f);
        for col in self.data.chunks_exact_mut(self.n_f) {
            for (a, b) in col.iter_mut().zip(v) {
                *a += *b;
            }
        }
    }
}

/// Draws `m_snapshots` i.i.d. circular complex Gaussian columns with the
/// model covariance, as `L w` with `L` the Cholesky factor.
pub fn sample_observation(model: &DmcModel, m_snapshots: usize, seed: u64) -> Result<ChannelObservation> {
    let (_, chol) = model.factorize()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_with_factor(&chol, m_snapshots, &mut rng))
}

const SAMPLE_BLOCK: usize = 64;

pub(crate) fn sample_with_factor(chol: &Cholesky, m_snapshots: usize, rng: &mut impl rand::Rng) -> ChannelObservation {
    let n = chol.dim();
    let w = standard_complex_normal(n * m_snapshots, rng);
    let mut out = vec![C64::new(0.0, 0.0); n * m_snapshots];
    // out (n x M, column-major) = L (row-major) * w (column-major), skipping
    // the zero blocks above the diagonal
    let l = chol.factor();
    let bs = SAMPLE_BLOCK.min(n);
    for r0 in (0..n).step_by(bs) {
        let rows = bs.min(n - r0);
        for c0 in (0..=r0).step_by(bs) {
            let cols = bs.min(n - c0);
            let (a, b) = (&l[r0 * n + c0..], &w[c0..]);
            let c = &mut out[r0..];
            if c0 == 0 {
                gemm::zgemm(rows, cols, m_snapshots, a, (n, 1), b, (1, n), c, (1, n));
            } else {
                gemm::zgemm_add(rows, cols, m_snapshots, a, (n, 1), b, (1, n), c, (1, n));
            }
        }
    }
    ChannelObservation { n_f: n, m_snapshots, data: out }
}

/// Samples of a standard circular complex Gaussian (unit total variance).
pub fn standard_complex_normal(len: usize, rng: &mut impl rand::Rng) -> Vec<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..len)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re * s, im * s)
        })
        .collect()
}
