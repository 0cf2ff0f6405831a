//! Cramér-Rao bounds for the delay of one specular path observed in DMC,
//! and the model-order mismatch sweep built on them.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DmcError, Result};
use crate::estimator::{estimate_multimode_with, estimate_single_mode, LmOptions, TerminationReason};
use crate::likelihood::{covariance_derivatives, fim_from_inverse, reparam_pack};
use crate::linalg::{Cholesky, C64};
use crate::model::{sample_observation, DmcModel, ModeParams};
use crate::pdp::{mode_pdps, toeplitz_pdp, Pdp};
use crate::seed;

/// Index of the delay in the joint parameter vector `[gamma_re, gamma_im,
/// tau, eta...]`.
pub const DELAY_INDEX: usize = 2;

/// A specular path `f_i = gamma exp(-j 2 pi i tau)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecularParams {
    pub gamma_re: f64,
    pub gamma_im: f64,
    pub tau: f64,
}

impl SpecularParams {
    pub fn new(gamma_re: f64, gamma_im: f64, tau: f64) -> Result<Self> {
        let sp = Self { gamma_re, gamma_im, tau };
        sp.validate()?;
        Ok(sp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(DmcError::param(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        if !(self.gamma_re.is_finite() && self.gamma_im.is_finite()) {
            return Err(DmcError::param("non-finite path weight"));
        }
        Ok(())
    }

    pub fn gamma(&self) -> C64 {
        C64::new(self.gamma_re, self.gamma_im)
    }
}

pub fn specular_response(sp: &SpecularParams, n_f: usize) -> Vec<C64> {
    let g = sp.gamma();
    (0..n_f).map(|i| g * C64::from_polar(1.0, -2.0 * PI * i as f64 * sp.tau)).collect()
}

/// Derivatives of the response with respect to `gamma_re`, `gamma_im`, `tau`.
fn response_derivatives(sp: &SpecularParams, n_f: usize) -> [Vec<C64>; 3] {
    let g = sp.gamma();
    let e: Vec<C64> = (0..n_f).map(|i| C64::from_polar(1.0, -2.0 * PI * i as f64 * sp.tau)).collect();
    let de_im = e.iter().map(|v| C64::i() * v).collect();
    let d_tau = e.iter().enumerate().map(|(i, v)| C64::new(0.0, -2.0 * PI * i as f64) * g * v).collect();
    [e, de_im, d_tau]
}

/// Fisher information of `[gamma_re, gamma_im, tau, eta...]` for `M`
/// snapshots `y = f + r`, `r ~ CN(0, R(model))`. The mean and covariance
/// blocks decouple.
pub fn joint_fim(sp: &SpecularParams, model: &DmcModel, m_snapshots: usize) -> Result<DMatrix<f64>> {
    sp.validate()?;
    let n = model.n_f();
    let chol = Cholesky::toeplitz(&model.covariance_toeplitz())?;
    let derivs = response_derivatives(sp, n);
    let whitened: Vec<Vec<C64>> = derivs.iter().map(|d| chol.solve(d)).collect();
    let eta = reparam_pack(model);
    let cov = fim_from_inverse(&chol.toeplitz_inverse(), &covariance_derivatives(&eta, n), m_snapshots);

    let p = 3 + eta.len();
    let m = m_snapshots as f64;
    let mut f = DMatrix::zeros(p, p);
    for a in 0..3 {
        for b in a..3 {
            let v: C64 = derivs[a].iter().zip(&whitened[b]).map(|(x, y)| x.conj() * y).sum();
            f[(a, b)] = 2.0 * m * v.re;
            f[(b, a)] = 2.0 * m * v.re;
        }
    }
    f.view_mut((3, 3), (eta.len(), eta.len())).copy_from(&cov);
    Ok(f)
}

/// `[FIM^-1]` at the delay entry. Only the parameters coupled to the delay
/// through nonzero entries are inverted, which leaves the bound unchanged
/// and tolerates unidentifiable blocks elsewhere.
pub fn crb_delay(fim: &DMatrix<f64>) -> Result<f64> {
    if fim.nrows() <= DELAY_INDEX || !fim.is_square() {
        return Err(DmcError::InvalidDim(format!("FIM of shape {:?} has no delay entry", fim.shape())));
    }
    let p = fim.nrows();
    let mut coupled = vec![false; p];
    coupled[DELAY_INDEX] = true;
    let mut stack = vec![DELAY_INDEX];
    while let Some(a) = stack.pop() {
        for b in 0..p {
            if !coupled[b] && (fim[(a, b)] != 0.0 || fim[(b, a)] != 0.0) {
                coupled[b] = true;
                stack.push(b);
            }
        }
    }
    let idx: Vec<usize> = (0..p).filter(|&a| coupled[a]).collect();
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| fim[(idx[i], idx[j])]);
    let inv = sub.cholesky().ok_or(DmcError::SingularFim)?.inverse();
    let at = idx.iter().position(|&a| a == DELAY_INDEX).expect("delay is coupled to itself");
    let v = inv[(at, at)];
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(DmcError::SingularFim)
    }
}

/// How the two-mode branch obtains its covariance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoModeBranch {
    /// Fit two modes, initialised from the true per-mode profiles.
    Fitted,
    /// Use the true parameters.
    Truth,
}

/// The mismatch scenario: a fixed path between two modes, the second of
/// which is swept in power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MismatchConfig {
    pub n_f: usize,
    pub m_snapshots: usize,
    pub alpha0: f64,
    pub mode1: ModeParams,
    pub mode2_delta2: f64,
    pub mode2_delta3: f64,
    /// `delta1` of the second mode at each level.
    pub sweep: Vec<f64>,
    pub path_tau: f64,
    /// Path peak above the expected mode-1 plus noise profile at `path_tau`.
    pub path_snr_db: f64,
    pub trials_per_level: usize,
    pub seed: u64,
    pub two_mode: TwoModeBranch,
    pub lm: LmOptions,
}

impl Default for MismatchConfig {
    fn default() -> Self {
        Self {
            n_f: 256,
            m_snapshots: 32,
            alpha0: 1e-8,
            mode1: ModeParams::new(1e-5, DEFAULT_DECAY, 0.05).expect("valid mode"),
            mode2_delta2: DEFAULT_DECAY,
            mode2_delta3: 0.5,
            sweep: log_space(1e-7, 1e-4, 8),
            path_tau: 0.45,
            path_snr_db: 15.0,
            trials_per_level: 200,
            seed: 0,
            two_mode: TwoModeBranch::Fitted,
            lm: LmOptions { step_tol: 1e-6, ..LmOptions::default() },
        }
    }
}

const DEFAULT_DECAY: f64 = 30.0;

/// `count` points from `lo` to `hi`, evenly spaced in log.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (count - 1) as f64).exp()).collect(),
    }
}

impl MismatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() || self.sweep.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(DmcError::Config("sweep must hold positive finite values".into()));
        }
        if self.sweep.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DmcError::Config("sweep must be strictly increasing".into()));
        }
        if self.trials_per_level == 0 || self.m_snapshots == 0 {
            return Err(DmcError::Config("trials_per_level and m_snapshots must be positive".into()));
        }
        if !self.path_snr_db.is_finite() {
            return Err(DmcError::Config("path_snr_db must be finite".into()));
        }
        self.lm.validate()?;
        self.model_at(self.sweep[0])?;
        self.path()?;
        Ok(())
    }

    /// The true two-mode model at one sweep level.
    pub fn model_at(&self, delta1: f64) -> Result<DmcModel> {
        let mode2 = ModeParams::new(delta1, self.mode2_delta2, self.mode2_delta3)?;
        DmcModel::new(vec![self.mode1, mode2], self.alpha0, self.n_f)
    }

    /// The path, with a real weight set from `path_snr_db`. A path of
    /// weight `gamma` shows up in the profile as `n_f^1.5 |gamma|^2` at its
    /// bin.
    pub fn path(&self) -> Result<SpecularParams> {
        let reference = DmcModel::new(vec![self.mode1], self.alpha0, self.n_f)?;
        let pdp = toeplitz_pdp(&reference.covariance_toeplitz());
        let bin = (self.path_tau * self.n_f as f64).round() as usize % self.n_f;
        let peak = pdp[bin] * 10f64.powf(self.path_snr_db / 10.0);
        SpecularParams::new((peak / (self.n_f as f64).powf(1.5)).sqrt(), 0.0, self.path_tau)
    }
}

/// Mean bounds over the successful trials of one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub delta1_level: f64,
    pub crb_one_mode: f64,
    pub crb_two_mode: f64,
    pub n_failed_one: usize,
    pub n_failed_two: usize,
}

pub const CRB_CSV_HEADER: &str = "delta1_level,crb_one_mode,crb_two_mode,n_failed_one,n_failed_two";

pub fn records_to_csv(records: &[LevelRecord]) -> String {
    let mut s = format!("{CRB_CSV_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{:e},{:e},{:e},{},{}",
            r.delta1_level, r.crb_one_mode, r.crb_two_mode, r.n_failed_one, r.n_failed_two
        );
    }
    s
}

/// A fit counts as failed if it errors or runs out of iterations.
fn fitted_crb(fit: Result<(DmcModel, crate::estimator::FitReport)>, sp: &SpecularParams, m: usize) -> Option<f64> {
    match fit {
        Ok((model, report)) if report.termination_reason != TerminationReason::MaxIters => {
            joint_fim(sp, &model, m).and_then(|f| crb_delay(&f)).ok()
        }
        Ok(_) => None,
        Err(e) => {
            log::debug!("fit failed: {e}");
            None
        }
    }
}

/// One realisation: the delay bound under a single-mode fit and under the
/// two-mode branch.
pub fn run_trial(cfg: &MismatchConfig, level: usize, trial: usize) -> Result<(Option<f64>, Option<f64>)> {
    let truth = cfg.model_at(cfg.sweep[level])?;
    let sp = cfg.path()?;
    let m = cfg.m_snapshots;
    let obs = sample_observation(&truth, m, seed::derive(cfg.seed, &[level as u64, trial as u64]))?;
    let one = fitted_crb(estimate_single_mode(&obs, &cfg.lm), &sp, m);
    let two = match cfg.two_mode {
        TwoModeBranch::Truth => Some(crb_delay(&joint_fim(&sp, &truth, m)?)?),
        TwoModeBranch::Fitted => {
            // each true mode profile on top of the noise floor, as a
            // separation would deliver it
            let floor = (cfg.n_f as f64).sqrt() * cfg.alpha0;
            let seps = mode_pdps(&truth)
                .into_iter()
                .map(|v| Pdp::linear(v.iter().map(|x| x.max(0.0) + floor).collect()))
                .collect::<Result<Vec<_>>>()?;
            fitted_crb(estimate_multimode_with(&obs, &seps, 2, &cfg.lm), &sp, m)
        }
    };
    Ok((one, two))
}

fn mean_of(values: &[Option<f64>]) -> (f64, usize) {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let mean = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
    (mean, values.len() - ok.len())
}

/// Sweeps the second mode's power. Trials run in parallel; results do not
/// depend on the thread count.
pub fn run_mismatch_experiment(cfg: &MismatchConfig) -> Result<Vec<LevelRecord>> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.sweep.len());
    for (level, &delta1) in cfg.sweep.iter().enumerate() {
        let trials =
            (0..cfg.trials_per_level).into_par_iter().map(|t| run_trial(cfg, level, t)).collect::<Result<Vec<_>>>()?;
        let (one, two): (Vec<_>, Vec<_>) = trials.into_iter().unzip();
        let (crb_one_mode, n_failed_one) = mean_of(&one);
        let (crb_two_mode, n_failed_two) = mean_of(&two);
        log::info!("delta1 {delta1:e}: one mode {crb_one_mode:e}, two modes {crb_two_mode:e}");
        records.push(LevelRecord { delta1_level: delta1, crb_one_mode, crb_two_mode, n_failed_one, n_failed_two });
    }
    Ok(records)
}
