//! Classical single-mode initialisation, Levenberg-Marquardt refinement
//! and the multi-mode estimation driver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DmcError, Result};
use crate::likelihood::{evaluate, nll, reparam_pack, reparam_unpack, EtaVector, SufficientStats};
use crate::model::{ChannelObservation, DmcModel, MAX_MODES};
use crate::pdp::{argmax, preprocess, Pdp, PdpDomain};

/// Relative power assigned to a mode when the profile is flat.
const DEGENERATE_POWER: f64 = 1e-6;
/// Damping inflations tried per iteration before giving up.
const MAX_INFLATIONS: usize = 20;

/// Damping schedule and stopping rules for [`lm_refine`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmOptions {
    pub mu0: f64,
    pub mu_up: f64,
    pub mu_down: f64,
    pub max_iters: usize,
    /// Stop when `||score||_inf` falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step has `||delta eta||_inf` below this.
    pub step_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { mu0: 1e-2, mu_up: 10.0, mu_down: 0.1, max_iters: 200, grad_tol: 1e-8, step_tol: 1e-10 }
    }
}

impl LmOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.mu0, self.mu_up, self.mu_down, self.grad_tol, self.step_tol]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.max_iters == 0 {
            return Err(DmcError::param("LM options must all be positive"));
        }
        if !(self.mu_down < 1.0 && 1.0 < self.mu_up) {
            return Err(DmcError::param("LM options need mu_down < 1 < mu_up"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    GradTol,
    StepTol,
    MaxIters,
    /// No damping level produced a decrease; the objective is at a minimum
    /// to working precision.
    Stalled,
    /// Noise-only model, solved in closed form.
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub eta_hat: EtaVector,
    /// Objective after the start point and after every accepted step.
    pub nll_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub termination_reason: TerminationReason,
}

impl FitReport {
    pub fn is_monotone(&self) -> bool {
        self.nll_trace.windows(2).all(|w| w[1] <= w[0])
    }
}

/// The initial estimates of a single mode, evaluated directly on a
/// profile in its own units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitEstimate {
    pub alpha0: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

/// ```text
/// alpha0 = min d
/// delta1 = max d - alpha0
/// delta2 = delta1 / (N (||d||_1 - alpha0))
/// delta3 = (argmax_i (d[i+1] - d[i]) - 1) / (N - 1),  i = 1..N-1 (1-based)
/// ```
///
/// A flat profile gives `delta1 = 1e-6 alpha0` instead of zero.
pub fn init_formulas(d: &[f64]) -> Result<InitEstimate> {
    let n = d.len();
    if n < 3 {
        return Err(DmcError::InvalidDim(format!("profile needs at least 3 bins, got {n}")));
    }
    if let Some((index, &value)) = d.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(DmcError::NonPositiveInput { index, value });
    }
    let alpha0 = d.iter().copied().fold(f64::INFINITY, f64::min);
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut delta1 = max - alpha0;
    if delta1 <= 0.0 {
        delta1 = DEGENERATE_POWER * alpha0;
    }
    let l1: f64 = d.iter().sum();
    let delta2 = delta1 / (n as f64 * (l1 - alpha0));
    let diffs: Vec<f64> = d.windows(2).map(|w| w[1] - w[0]).collect();
    // 0-based j corresponds to 1-based i = j + 1, so (i - 1) = j
    let delta3 = argmax(&diffs) as f64 / (n - 1) as f64;
    Ok(InitEstimate { alpha0, delta1, delta2, delta3 })
}

/// Single-mode starting point `eta` (m = 1) from a linear profile in the
/// units of [`preprocess`].
///
/// The formulas of [`init_formulas`] are taken on the profile as given and
/// mapped to model units: powers carry the `sqrt(n_f)` of the profile
/// normalisation, and the area-based decay estimate is expressed per bin,
/// which the normalised-delay convention turns into a factor `n_f^2`.
pub fn init_single_mode(d: &Pdp) -> Result<EtaVector> {
    if d.domain() != PdpDomain::Linear {
        return Err(DmcError::param("initialisation expects a linear-domain profile"));
    }
    let est = init_formulas(d.values())?;
    let (alpha0, delta1, delta2) = to_model_units(&est, d.len());
    EtaVector::from_parts(&[(delta1.ln(), delta2.ln(), est.delta3)], alpha0.ln())
}

fn to_model_units(est: &InitEstimate, n_f: usize) -> (f64, f64, f64) {
    let n = n_f as f64;
    let root = n.sqrt();
    (est.alpha0 / root, est.delta1 / root, est.delta2 * n * n)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped Fisher-scoring iteration on the negative log-likelihood:
/// `delta = (FIM + mu I)^-1 (-score)`, accepted only if the objective
/// decreases.
pub fn lm_refine(stats: &SufficientStats, eta0: &EtaVector, opts: &LmOptions) -> Result<FitReport> {
    opts.validate()?;
    let mut eta = eta0.clone().wrapped();
    let mut ev = evaluate(stats, &eta)?;
    // objective values always come from `nll`, so the trace compares like
    // with like
    let mut current = nll(stats, &eta)?;
    let mut mu = opts.mu0;
    let mut trace = vec![current];
    let p = eta.len();
    let mut reason = TerminationReason::MaxIters;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        if inf_norm(&ev.score) < opts.grad_tol {
            reason = TerminationReason::GradTol;
            break;
        }
        iterations += 1;
        let neg_score = DVector::from_iterator(p, ev.score.iter().map(|g| -g));
        let mut accepted = None;
        for _ in 0..MAX_INFLATIONS {
            let damped = &ev.fim + DMatrix::identity(p, p) * mu;
            let step = match damped.cholesky() {
                Some(c) => c.solve(&neg_score),
                None => {
                    mu *= opts.mu_up;
                    continue;
                }
            };
            let cand: Vec<f64> = eta.as_slice().iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            // candidates must map back to a model: exp of the log entries
            // may not underflow to zero
            let cand = match EtaVector::new(cand).map(EtaVector::wrapped) {
                Ok(c) if reparam_unpack(&c, stats.n_f()).is_ok() => c,
                _ => {
                    mu *= opts.mu_up;
                    continue;
                }
            };
            match nll(stats, &cand) {
                Ok(v) if v < current => {
                    accepted = Some((cand, v, inf_norm(step.as_slice())));
                    mu *= opts.mu_down;
                    break;
                }
                _ => mu *= opts.mu_up,
            }
        }
        let Some((cand, value, step_norm)) = accepted else {
            if iterations == 1 {
                return Err(DmcError::NoDescentDirection { inflations: MAX_INFLATIONS });
            }
            reason = TerminationReason::Stalled;
            break;
        };
        eta = cand;
        ev = evaluate(stats, &eta)?;
        current = value;
        trace.push(value);
        if step_norm < opts.step_tol {
            reason = TerminationReason::StepTol;
            break;
        }
    }
    log::debug!("lm_refine: {iterations} iterations, {reason:?}, nll {current}");
    Ok(FitReport {
        eta_hat: eta,
        nll_trace: trace,
        iterations,
        converged: reason != TerminationReason::MaxIters,
        termination_reason: reason,
    })
}

/// Orders per-mode triples like [`DmcModel`]: ascending delay, ties by
/// descending power.
fn canonical_triples(mut modes: Vec<(f64, f64, f64)>) -> Vec<(f64, f64, f64)> {
    modes.sort_by(|a, b| a.2.total_cmp(&b.2).then_with(|| b.0.total_cmp(&a.0)));
    modes
}

/// Joint estimation of `model_order` modes from a residual, initialised
/// per mode from separated profiles (linear domain, units of
/// [`preprocess`]). The noise floor starts at the minimum of the residual's
/// own profile.
pub fn estimate_multimode(
    residual: &ChannelObservation,
    separations: &[Pdp],
    model_order: usize,
) -> Result<(DmcModel, FitReport)> {
    estimate_multimode_with(residual, separations, model_order, &LmOptions::default())
}

pub fn estimate_multimode_with(
    residual: &ChannelObservation,
    separations: &[Pdp],
    model_order: usize,
    opts: &LmOptions,
) -> Result<(DmcModel, FitReport)> {
    if model_order > MAX_MODES {
        return Err(DmcError::param(format!("model order {model_order} exceeds {MAX_MODES}")));
    }
    if separations.len() != model_order {
        return Err(DmcError::OrderMismatch { order: model_order, separations: separations.len() });
    }
    let n_f = residual.n_f();
    if separations.iter().any(|s| s.len() != n_f) {
        return Err(DmcError::shape("separation length differs from n_f"));
    }
    let stats = SufficientStats::from_observation(residual);
    let total = preprocess(residual);

    if model_order == 0 {
        // ML noise floor: Tr(S) / n_f, the per-bin mean of the profile
        let alpha0 = stats.sample_covariance().trace() / n_f as f64;
        let model = DmcModel::noise_only(alpha0, n_f)?;
        let eta = reparam_pack(&model);
        let value = nll(&stats, &eta)?;
        let report = FitReport {
            eta_hat: eta,
            nll_trace: vec![value],
            iterations: 0,
            converged: true,
            termination_reason: TerminationReason::ClosedForm,
        };
        return Ok((model, report));
    }

    let mut triples = Vec::with_capacity(model_order);
    for sep in separations {
        let eta = init_single_mode(sep)?;
        triples.push(eta.mode(0));
    }
    let floor = init_formulas(total.values())?.alpha0 / (n_f as f64).sqrt();
    let eta0 = EtaVector::from_parts(&canonical_triples(triples), floor.ln())?;
    let mut report = lm_refine(&stats, &eta0, opts)?;
    let model = reparam_unpack(&report.eta_hat, n_f)?;
    report.eta_hat = reparam_pack(&model);
    Ok((model, report))
}

/// The single-mode pipeline: initialise from the residual's own profile and
/// refine.
pub fn estimate_single_mode(residual: &ChannelObservation, opts: &LmOptions) -> Result<(DmcModel, FitReport)> {
    let d = preprocess(residual);
    estimate_multimode_with(residual, &[d], 1, opts)
}
