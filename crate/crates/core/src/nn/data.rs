//! Streamed synthetic training data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor3;
use crate::error::{DmcError, Result};
use crate::model::{sample_with_factor, ChannelObservation, DmcModel, ModeParams, MAX_MODES};
use crate::pdp::{mode_pdps, normalize, preprocess, toeplitz_pdp};
use crate::seed;

/// Distributions of the synthetic scenarios. Ranges are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_f: usize,
    pub max_order: usize,
    /// Upper bound of the uniform onset delay.
    pub delay_max: f64,
    /// 3 dB width of a mode's delay profile in bins, log-uniform.
    pub width_bins: [f64; 2],
    /// Peak of each mode's expected profile over the noise floor in dB,
    /// uniform in dB.
    pub peak_snr_db: [f64; 2],
    /// `log10(alpha0)`, uniform.
    pub alpha0_log10: [f64; 2],
    pub snapshots: [usize; 2],
    /// Minimum gap between onset delays of distinct modes.
    pub min_separation: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_f: 512,
            max_order: MAX_MODES,
            delay_max: 0.85,
            width_bins: [2.0, 100.0],
            peak_snr_db: [5.0, 40.0],
            alpha0_log10: [-2.0, 2.0],
            snapshots: [8, 64],
            min_separation: 0.0,
        }
    }
}

impl GenConfig {
    /// Held-out scenarios: well separated modes, at least 15 dB above noise.
    pub fn held_out() -> Self {
        Self { peak_snr_db: [15.0, 40.0], min_separation: 0.15, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DmcError::Config(m.to_string()));
        if self.n_f < 2 {
            return bad("n_f must be at least 2");
        }
        if self.max_order > MAX_MODES {
            return bad("max_order exceeds 3");
        }
        if !(self.delay_max >= 0.0 && self.delay_max < 1.0) {
            return bad("delay_max must lie in [0, 1)");
        }
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.width_bins) || self.width_bins[0] <= 0.0 {
            return bad("width_bins must be a positive increasing range");
        }
        if !ordered(self.peak_snr_db) || !ordered(self.alpha0_log10) {
            return bad("snr and alpha0 ranges must be increasing");
        }
        if self.snapshots[0] == 0 || self.snapshots[0] > self.snapshots[1] {
            return bad("snapshots must be a positive increasing range");
        }
        let span = self.min_separation * self.max_order.saturating_sub(1) as f64;
        if self.min_separation < 0.0 || span > self.delay_max {
            return bad("min_separation cannot be met within delay_max");
        }
        Ok(())
    }
}

/// One training example.
///
/// `mode_labels[k]` is the noiseless expected profile of the `k`-th mode
/// (ascending onset delay) divided by the input's scale, zero for absent
/// modes. `noise_floor` is the expected noise level in the same units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub input: Vec<f64>,
    pub scale: f64,
    pub mode_labels: Vec<Vec<f64>>,
    pub noise_floor: f64,
    pub order_label: usize,
    pub model: DmcModel,
    pub m_snapshots: usize,
}

impl TrainSample {
    /// Decoder targets: `ln(label_k + noise_floor)`, the log-normalised
    /// profile of mode `k` over the noise floor alone. Absent modes map to
    /// the flat floor.
    pub fn targets(&self) -> Vec<Vec<f64>> {
        self.mode_labels.iter().map(|l| l.iter().map(|v| (v + self.noise_floor).ln()).collect()).collect()
    }
}

/// Deterministic, random-access stream: sample `i` depends only on
/// `(seed, i)`.
#[derive(Clone, Debug)]
pub struct SampleStream {
    cfg: GenConfig,
    seed: u64,
    next: u64,
}

impl SampleStream {
    pub fn new(cfg: GenConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, seed, next: 0 })
    }

    pub fn config(&self) -> &GenConfig {
        &self.cfg
    }

    /// Position of the next sample.
    pub fn position(&self) -> u64 {
        self.next
    }

    pub fn seek(&mut self, index: u64) {
        self.next = index;
    }

    /// The `index`-th sample together with the observation it came from.
    pub fn draw(&self, index: u64) -> Result<(TrainSample, ChannelObservation)> {
        let cfg = &self.cfg;
        let n = cfg.n_f;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed::derive(self.seed, &[index]));
        let order = rng.random_range(0..=cfg.max_order);
        let delays = draw_delays(order, cfg, rng);
        let alpha0 = 10f64.powf(rng.random_range(cfg.alpha0_log10[0]..=cfg.alpha0_log10[1]));
        let floor = (n as f64).sqrt() * alpha0;
        let mut modes = Vec::with_capacity(order);
        for delta3 in delays {
            let (lo, hi) = (cfg.width_bins[0].ln(), cfg.width_bins[1].ln());
            let width = rng.random_range(lo..=hi).exp();
            let delta2 = std::f64::consts::LN_2 * n as f64 / width;
            let snr = 10f64.powf(rng.random_range(cfg.peak_snr_db[0]..=cfg.peak_snr_db[1]) / 10.0);
            let unit = ModeParams::new(1.0, delta2, delta3)?;
            let peak = toeplitz_pdp(&unit.toeplitz(n)).into_iter().fold(f64::MIN, f64::max);
            modes.push(ModeParams::new(snr * floor / peak, delta2, delta3)?);
        }
        let m = rng.random_range(cfg.snapshots[0]..=cfg.snapshots[1]);
        let model = DmcModel::new(modes, alpha0, n)?;
        let (_, chol) = model.factorize()?;
        let obs = sample_with_factor(&chol, m, rng);
        let sample = labelled_sample(model, &obs, cfg.max_order)?;
        Ok((sample, obs))
    }
}

/// Labels an observation drawn from `model`, padding the mode labels to
/// `slots` entries.
pub fn labelled_sample(model: DmcModel, obs: &ChannelObservation, slots: usize) -> Result<TrainSample> {
    let n = model.n_f();
    if obs.n_f() != n || model.order() > slots {
        return Err(DmcError::shape("observation or order does not fit the sample layout"));
    }
    let d = normalize(&preprocess(obs))?;
    let scale = d.scale();
    let mut mode_labels: Vec<Vec<f64>> =
        mode_pdps(&model).into_iter().map(|p| p.into_iter().map(|v| (v / scale).max(0.0)).collect()).collect();
    mode_labels.resize(slots, vec![0.0; n]);
    Ok(TrainSample {
        input: d.into_values(),
        scale,
        mode_labels,
        noise_floor: (n as f64).sqrt() * model.alpha0() / scale,
        order_label: model.order(),
        m_snapshots: obs.m_snapshots(),
        model,
    })
}

impl Iterator for SampleStream {
    type Item = Result<TrainSample>;

    fn next(&mut self) -> Option<Self::Item> {
        let i = self.next;
        self.next += 1;
        Some(self.draw(i).map(|(s, _)| s))
    }
}

/// Sorted onset delays, rejection-sampled to respect `min_separation`.
fn draw_delays(order: usize, cfg: &GenConfig, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let mut d: Vec<f64> = (0..order).map(|_| rng.random_range(0.0..=cfg.delay_max)).collect();
        d.sort_by(f64::total_cmp);
        if d.windows(2).all(|w| w[1] - w[0] >= cfg.min_separation) {
            return d;
        }
    }
}

/// Network input `[B, 1, L]`, targets `[B, max_order, L]` and order labels.
pub fn assemble(samples: &[TrainSample]) -> Result<(Tensor3, Tensor3, Vec<usize>)> {
    let first = samples.first().ok_or_else(|| DmcError::shape("empty batch"))?;
    let (l, k) = (first.input.len(), first.mode_labels.len());
    let mut x = Vec::with_capacity(samples.len() * l);
    let mut t = Vec::with_capacity(samples.len() * k * l);
    for s in samples {
        if s.input.len() != l || s.mode_labels.len() != k {
            return Err(DmcError::shape("samples of different shapes in one batch"));
        }
        x.extend_from_slice(&s.input);
        t.extend(s.targets().into_iter().flatten());
    }
    let orders = samples.iter().map(|s| s.order_label).collect();
    Ok((Tensor3::new(samples.len(), 1, l, x)?, Tensor3::new(samples.len(), k, l, t)?, orders))
}
