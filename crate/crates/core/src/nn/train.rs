//! Mini-batch training with Adam on the streamed synthetic data.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[cfg(test)]
use super::checkpoint::load_net;
use super::checkpoint::{load_checkpoint, save_checkpoint, TrainState};
use super::data::{assemble, GenConfig, SampleStream, TrainSample};
use super::loss::{loss, LossValue, LossWeights};
use super::net::{Net, NetConfig};
use crate::error::{DmcError, Result};
use crate::seed;
use crate::tensor_io::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam over the trainable parameters of a [`Net`], keyed by name.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, t: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, net: &mut Net) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let moments = &mut self.moments;
        net.visit_mut(&mut |name, p| {
            if !p.trainable {
                return;
            }
            let (m, v) =
                moments.entry(name.to_string()).or_insert_with(|| (vec![0.0; p.value.len()], vec![0.0; p.value.len()]));
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                p.value[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        });
    }

    fn export(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.moments.len());
        for (name, (m, v)) in &self.moments {
            out.push((format!("m.{name}"), Tensor::real(vec![m.len()], m.clone()).expect("1-d")));
            out.push((format!("v.{name}"), Tensor::real(vec![v.len()], v.clone()).expect("1-d")));
        }
        out
    }

    fn import(cfg: AdamConfig, t: u64, tensors: &[(String, Tensor)]) -> Result<Self> {
        let mut moments: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (key, tensor) in tensors {
            let values = tensor.clone().into_real()?;
            let (kind, name) =
                key.split_once('.').ok_or_else(|| DmcError::Format(format!("bad optimiser tensor {key}")))?;
            let slot = moments.entry(name.to_string()).or_default();
            match kind {
                "m" => slot.0 = values,
                "v" => slot.1 = values,
                _ => return Err(DmcError::Format(format!("bad optimiser tensor {key}"))),
            }
        }
        Ok(Self { cfg, t, moments })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub log_every: u64,
    pub val_samples: usize,
    /// Checkpoint period in steps when an output directory is given; 0
    /// writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub loss: LossWeights,
    pub adam: AdamConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 64,
            log_every: 500,
            val_samples: 256,
            checkpoint_every: 0,
            loss: LossWeights::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(DmcError::Config("batch_size and log_every must be positive".into()));
        }
        if !(self.adam.lr > 0.0) || !(self.loss.w_x >= 0.0) || !(self.loss.w_m >= 0.0) {
            return Err(DmcError::Config("learning rate and loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log: averages over the preceding logging window
/// and the order accuracy on the fixed validation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss_mode: f64,
    pub loss_order: f64,
    pub val_order_acc: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "step,loss_mode,loss_order,val_order_acc";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{}", self.step, self.loss_mode, self.loss_order, self.val_order_acc)
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = || DmcError::Format(format!("bad metrics line {line:?}"));
        if f.len() != 4 {
            return Err(bad());
        }
        Ok(Self {
            step: f[0].parse().map_err(|_| bad())?,
            loss_mode: f[1].parse().map_err(|_| bad())?,
            loss_order: f[2].parse().map_err(|_| bad())?,
            val_order_acc: f[3].parse().map_err(|_| bad())?,
        })
    }

    pub fn loss(&self) -> f64 {
        self.loss_mode + self.loss_order
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(MetricsRow::CSV_HEADER) {
        return Err(DmcError::Format("metrics header".into()));
    }
    lines.filter(|l| !l.trim().is_empty()).map(MetricsRow::from_csv).collect()
}

/// Validation scenarios derived from the training distribution: modes at
/// least 15 dB above the noise floor and 0.15 apart in delay.
pub fn validation_config(gen: &GenConfig) -> GenConfig {
    let lo = gen.peak_snr_db[0].max(15.0);
    GenConfig {
        peak_snr_db: [lo, gen.peak_snr_db[1].max(lo)],
        min_separation: gen.min_separation.max(0.15),
        ..gen.clone()
    }
}

/// Fraction of samples whose order is predicted correctly (evaluation mode).
pub fn order_accuracy(net: &Net, samples: &[TrainSample], batch: usize) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut hits = 0;
    for chunk in samples.chunks(batch.max(1)) {
        let (x, _, orders) = assemble(chunk)?;
        let out = net.infer(&x)?;
        hits += out.predicted_orders().iter().zip(&orders).filter(|(p, o)| p == o).count();
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Training loop state. Seeds: network initialisation, training stream and
/// validation stream are derived from one base seed.
pub struct Trainer {
    net: Net,
    adam: Adam,
    stream: SampleStream,
    val: Vec<TrainSample>,
    opts: TrainOptions,
    seed: u64,
    step: u64,
    window: (f64, f64, u64),
}

impl Trainer {
    pub fn new(net_config: NetConfig, gen: GenConfig, opts: TrainOptions, seed: u64) -> Result<Self> {
        let net = Net::new(net_config, seed::derive(seed, &[0]))?;
        Self::assemble(net, Adam::new(opts.adam), gen, opts, seed, 0)
    }

    fn assemble(net: Net, adam: Adam, gen: GenConfig, opts: TrainOptions, seed: u64, step: u64) -> Result<Self> {
        opts.validate()?;
        if gen.n_f != net.config().input_length || gen.max_order != net.config().decoders {
            return Err(DmcError::Config(format!(
                "generator (n_f {}, max_order {}) does not match the network (input {}, decoders {})",
                gen.n_f,
                gen.max_order,
                net.config().input_length,
                net.config().decoders
            )));
        }
        let mut stream = SampleStream::new(gen.clone(), seed::derive(seed, &[1]))?;
        stream.seek(step * opts.batch_size as u64);
        let val = SampleStream::new(validation_config(&gen), seed::derive(seed, &[2]))?
            .take(opts.val_samples)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { net, adam, stream, val, opts, seed, step, window: (0.0, 0.0, 0) })
    }

    /// Resumes from a checkpoint written by [`Trainer::save`].
    pub fn resume(dir: impl AsRef<Path>, gen: GenConfig, opts: TrainOptions) -> Result<Self> {
        let (weights, state) = load_checkpoint(dir)?;
        let state = state.ok_or_else(|| DmcError::Format("checkpoint has no training state".into()))?;
        let net = Net::from_weights(&weights)?;
        let adam = Adam::import(opts.adam, state.adam_steps, &state.moments)?;
        let trainer = Self::assemble(net, adam, gen, opts, state.seed, state.step)?;
        if trainer.stream.position() != state.stream_position {
            return Err(DmcError::Config("batch size differs from the checkpointed run".into()));
        }
        Ok(trainer)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let state = TrainState {
            step: self.step,
            seed: self.seed,
            stream_position: self.stream.position(),
            adam_steps: self.adam.steps(),
            moments: self.adam.export(),
        };
        save_checkpoint(dir, &self.net.weights(), Some(&state))
    }

    /// [`Trainer::save`] through a sibling temporary directory, so an
    /// interrupted write never leaves a half-written checkpoint behind.
    fn save_atomic(&self, dir: &Path) -> Result<()> {
        let tmp = dir.with_extension("tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        self.save(&tmp)?;
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&tmp, dir)?;
        Ok(())
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn into_net(self) -> Net {
        self.net
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn validation_set(&self) -> &[TrainSample] {
        &self.val
    }

    /// Loss of the next batch without updating anything.
    pub fn peek_loss(&self) -> Result<LossValue> {
        let samples = self.next_batch_samples()?;
        let (x, t, orders) = assemble(&samples)?;
        let mut net = self.net.clone();
        let out = net.forward(&x, true)?;
        Ok(loss(&out, &t, &orders, self.opts.loss)?.0)
    }

    fn next_batch_samples(&self) -> Result<Vec<TrainSample>> {
        let start = self.stream.position();
        (start..start + self.opts.batch_size as u64).map(|i| self.stream.draw(i).map(|(s, _)| s)).collect()
    }

    /// One optimisation step on the next batch of the stream.
    pub fn step(&mut self) -> Result<LossValue> {
        let samples = self.next_batch_samples()?;
        self.stream.seek(self.stream.position() + samples.len() as u64);
        let (x, t, orders) = assemble(&samples)?;
        self.net.zero_grad();
        let out = self.net.forward(&x, true)?;
        let (value, grad) = loss(&out, &t, &orders, self.opts.loss)?;
        self.step += 1;
        if !value.total().is_finite() {
            return Err(DmcError::DivergedLoss { step: self.step as usize });
        }
        self.net.backward(&grad.dmodes, &grad.dlogits)?;
        self.adam.update(&mut self.net);
        if !self.net.is_finite() {
            return Err(DmcError::DivergedLoss { step: self.step as usize });
        }
        self.window.0 += value.mode;
        self.window.1 += value.order;
        self.window.2 += 1;
        Ok(value)
    }

    pub fn validation_accuracy(&self) -> Result<f64> {
        order_accuracy(&self.net, &self.val, self.opts.batch_size)
    }

    /// Runs `steps` steps, emitting a metrics row every `log_every` steps
    /// and calling `on_row` with it (e.g. to append to a log or write a
    /// checkpoint).
    pub fn run(
        &mut self,
        steps: u64,
        mut on_row: impl FnMut(&Self, &MetricsRow) -> Result<()>,
    ) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        for _ in 0..steps {
            self.step()?;
            if self.step % self.opts.log_every == 0 {
                let (m, o, n) = self.window;
                let row = MetricsRow {
                    step: self.step,
                    loss_mode: m / n as f64,
                    loss_order: o / n as f64,
                    val_order_acc: self.validation_accuracy()?,
                };
                self.window = (0.0, 0.0, 0);
                log::info!(
                    "step {} loss_mode {:.4} loss_order {:.4} val_acc {:.3}",
                    row.step,
                    row.loss_mode,
                    row.loss_order,
                    row.val_order_acc
                );
                on_row(self, &row)?;
                rows.push(row);
            }
        }
        Ok(rows)
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Trains into `out`, writing `metrics.csv` and `checkpoint/`. An existing
/// checkpoint from the same seed is resumed, so an interrupted run can be
/// restarted with the same arguments and ends with identical files.
pub fn train_to_dir(
    out: impl AsRef<Path>,
    net_config: NetConfig,
    gen: GenConfig,
    opts: TrainOptions,
    seed: u64,
) -> Result<Trainer> {
    let out = out.as_ref();
    fs::create_dir_all(out)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    let metrics = out.join(METRICS_FILE);
    let mut trainer = if ckpt.join("manifest.json").exists() {
        let t = Trainer::resume(&ckpt, gen, opts.clone())?;
        if t.seed != seed || t.net.config() != &net_config {
            return Err(DmcError::Config(format!("{} holds a different run", out.display())));
        }
        let kept: Vec<MetricsRow> = read_metrics(&metrics)?.into_iter().filter(|r| r.step <= t.step).collect();
        write_metrics(&metrics, &kept)?;
        t
    } else {
        write_metrics(&metrics, &[])?;
        Trainer::new(net_config, gen, opts.clone(), seed)?
    };
    let remaining = opts.steps.saturating_sub(trainer.step);
    let every = opts.checkpoint_every;
    trainer.run(remaining, |t, row| {
        let mut f = fs::OpenOptions::new().append(true).open(&metrics)?;
        writeln!(f, "{}", row.to_csv())?;
        if every > 0 && t.step % every == 0 && t.step < opts.steps {
            t.save_atomic(&ckpt)?;
        }
        Ok(())
    })?;
    trainer.save_atomic(&ckpt)?;
    Ok(trainer)
}

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut text = format!("{}\n", MetricsRow::CSV_HEADER);
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
