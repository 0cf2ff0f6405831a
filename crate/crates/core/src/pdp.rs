//! Power-delay profiles: estimation from observations, the model
//! expectation, and log-normalisation for the network input.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{DmcError, Result};
use crate::linalg::{Toeplitz, C64};
use crate::model::{ChannelObservation, DmcModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdpDomain {
    Linear,
    LogNormalized,
}

/// Averaged power-delay profile.
///
/// In the linear domain `scale` is 1; after [`normalize`] it holds the
/// maximum of the linear profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pdp {
    values: Vec<f64>,
    scale: f64,
    domain: PdpDomain,
}

impl Pdp {
    pub fn linear(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(DmcError::InvalidDim("empty power-delay profile".into()));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(DmcError::NonPositiveInput { index, value });
        }
        Ok(Self { values, scale: 1.0, domain: PdpDomain::Linear })
    }

    /// Log-normalised profile with its stored scale. The maximum entry must
    /// be exactly zero.
    pub fn log_normalized(values: Vec<f64>, scale: f64) -> Result<Self> {
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max != 0.0 {
            return Err(DmcError::param(format!("normalised profile must peak at 0, got {max}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(DmcError::param(format!("invalid scale {scale}")));
        }
        Ok(Self { values, scale, domain: PdpDomain::LogNormalized })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn domain(&self) -> PdpDomain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Unitary inverse DFT (`1/sqrt(n)` scaling) of length `n`.
pub struct UnitaryIdft {
    n: usize,
    plan: Arc<dyn Fft<f64>>,
}

impl UnitaryIdft {
    pub fn new(n: usize) -> Self {
        Self { n, plan: FftPlanner::new().plan_fft_inverse(n) }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n);
        let mut buf = x.to_vec();
        self.plan.process(&mut buf);
        let s = 1.0 / (self.n as f64).sqrt();
        buf.iter_mut().for_each(|z| *z *= s);
        buf
    }

    /// Transforms consecutive length-`n` blocks in place.
    pub fn apply_in_place(&self, blocks: &mut [C64]) {
        self.plan.process(blocks);
        let s = 1.0 / (self.n as f64).sqrt();
        blocks.iter_mut().for_each(|z| *z *= s);
    }
}

/// `d = sqrt(n_f) / M * sum_k |F^H r_k|^2` with the unitary inverse DFT.
pub fn preprocess(obs: &ChannelObservation) -> Pdp {
    let n = obs.n_f();
    let idft = UnitaryIdft::new(n);
    let mut buf = obs.columns().to_vec();
    idft.apply_in_place(&mut buf);
    let mut d = vec![0.0; n];
    for col in buf.chunks_exact(n) {
        for (acc, z) in d.iter_mut().zip(col) {
            *acc += z.norm_sqr();
        }
    }
    let c = (n as f64).sqrt() / obs.m_snapshots() as f64;
    d.iter_mut().for_each(|x| *x *= c);
    Pdp { values: d, scale: 1.0, domain: PdpDomain::Linear }
}

/// `sqrt(n) diag(F^H T F)` for a Hermitian Toeplitz covariance: the mean of
/// [`preprocess`] under that covariance.
pub fn toeplitz_pdp(t: &Toeplitz) -> Vec<f64> {
    let n = t.dim();
    let col = t.column();
    // diag_k = sum_{|l|<n} (1 - |l|/n) c~[l] e^{j 2 pi l k / n}
    //        = 2 Re(A_k) - c0,  A = unnormalised IDFT of (1 - l/n) c[l]
    let mut a: Vec<C64> = col.iter().enumerate().map(|(l, c)| c * (1.0 - l as f64 / n as f64)).collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut a);
    let root = (n as f64).sqrt();
    a.iter().map(|z| root * (2.0 * z.re - col[0].re)).collect()
}

/// Expected power-delay profile of a model, in the units of [`preprocess`].
pub fn expected_pdp(model: &DmcModel) -> Pdp {
    let values = toeplitz_pdp(&model.covariance_toeplitz());
    Pdp { values, scale: 1.0, domain: PdpDomain::Linear }
}

/// Expected profile of each mode on its own, without the noise floor.
pub fn mode_pdps(model: &DmcModel) -> Vec<Vec<f64>> {
    model.modes().iter().map(|m| toeplitz_pdp(&m.toeplitz(model.n_f()))).collect()
}

/// `d_n = log(d / max d)`, storing `max d` as the scale. Taking the log of
/// the ratio makes the result exactly invariant to power-of-two amplitude
/// scaling of the observation.
pub fn normalize(d: &Pdp) -> Result<Pdp> {
    if d.domain != PdpDomain::Linear {
        return Err(DmcError::param("normalize expects a linear-domain profile"));
    }
    if let Some((index, &value)) = d.values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(DmcError::NonPositiveInput { index, value });
    }
    let peak = d.values[argmax(&d.values)];
    let values = d.values.iter().map(|v| (v / peak).ln()).collect();
    Ok(Pdp { values, scale: peak, domain: PdpDomain::LogNormalized })
}

/// Inverse of [`normalize`].
pub fn denormalize(d: &Pdp) -> Result<Pdp> {
    if d.domain != PdpDomain::LogNormalized {
        return Err(DmcError::param("denormalize expects a log-normalised profile"));
    }
    Ok(Pdp { values: rescale_log(&d.values, d.scale), scale: 1.0, domain: PdpDomain::Linear })
}

/// `exp(v) * scale`, used for network outputs in the normalised frame.
pub fn rescale_log(values: &[f64], scale: f64) -> Vec<f64> {
    let log_scale = scale.ln();
    values.iter().map(|v| (v + log_scale).exp()).collect()
}
