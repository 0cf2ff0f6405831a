//! The U-Net style autoencoder: a shared encoder, a learned latent split,
//! one decoder per mode and a model-order head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    BatchNorm1d, Conv1d, ConvBlock, ConvTranspose1d, Layer, Linear, Param, ParamReader, ParamVisitor, Relu,
};
use super::tensor::Tensor3;
use crate::error::{DmcError, Result};

/// Architecture hyper-parameters.
///
/// Activations are indexed by their downsampling level `j`, with length
/// `input_length / 2^j`: level 0 and 1 are the two stem convolutions (the
/// second one strided), levels `2..=encoder_blocks + 1` the encoder blocks.
/// The channel count at level `j` is `base_channels * 2^(j-1)` for `j >= 1`.
///
/// Every decoder starts from `decoder_features` latent features; its first
/// upsampling block uses stride
/// `input_length / (decoder_features * 2^(up_blocks - 1))` and the remaining
/// blocks stride 2, each joined with the encoder activation of equal length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub input_length: usize,
    pub base_channels: usize,
    pub encoder_blocks: usize,
    pub decoders: usize,
    pub decoder_features: usize,
    pub up_blocks: usize,
    pub head_channels: usize,
    pub head_hidden: [usize; 2],
}

impl NetConfig {
    /// Full-width network: 32 to 512 channels, 16-feature latent.
    pub fn paper() -> Self {
        Self {
            input_length: 512,
            base_channels: 32,
            encoder_blocks: 4,
            decoders: 3,
            decoder_features: 8,
            up_blocks: 5,
            head_channels: 32,
            head_hidden: [128, 64],
        }
    }

    /// Same topology with an eighth of the channels (4 to 64), trainable on
    /// a single CPU core.
    pub fn desk() -> Self {
        Self { base_channels: 4, head_channels: 8, head_hidden: [64, 32], ..Self::paper() }
    }

    /// Minimal configuration for gradient checks.
    pub fn tiny() -> Self {
        Self {
            input_length: 32,
            base_channels: 2,
            encoder_blocks: 1,
            decoders: 3,
            decoder_features: 2,
            up_blocks: 2,
            head_channels: 2,
            head_hidden: [6, 5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DmcError::Config(msg));
        if self.base_channels == 0 || self.decoders == 0 || self.decoder_features == 0 || self.up_blocks == 0 {
            return bad("channel, decoder, feature and block counts must be positive".into());
        }
        if self.head_channels == 0 || self.head_hidden.contains(&0) {
            return bad("order head sizes must be positive".into());
        }
        let down = 1usize << (self.encoder_blocks + 1);
        if self.input_length < down || self.input_length % down != 0 {
            return bad(format!("input length {} not divisible by {down}", self.input_length));
        }
        let up_rest = self.decoder_features << (self.up_blocks - 1);
        if self.input_length % up_rest != 0 || self.input_length < up_rest {
            return bad(format!(
                "{} features cannot be upsampled to {} with {} blocks",
                self.decoder_features, self.input_length, self.up_blocks
            ));
        }
        if self.up_blocks > self.encoder_blocks + 2 {
            return bad(format!("{} upsampling blocks need deeper skip connections", self.up_blocks));
        }
        Ok(())
    }

    pub fn latent_length(&self) -> usize {
        self.input_length >> (self.encoder_blocks + 1)
    }

    pub fn latent_channels(&self) -> usize {
        self.channels_at(self.encoder_blocks + 1)
    }

    pub fn order_classes(&self) -> usize {
        self.decoders + 1
    }

    /// Stride of the first decoder block.
    pub fn first_up_stride(&self) -> usize {
        self.input_length / (self.decoder_features << (self.up_blocks - 1))
    }

    pub fn channels_at(&self, level: usize) -> usize {
        if level == 0 {
            self.base_channels
        } else {
            self.base_channels << (level - 1)
        }
    }

    /// Total downsampling of the encoder (stem stride times block strides).
    pub fn downsampling_factor(&self) -> usize {
        1 << (self.encoder_blocks + 1)
    }

    /// Total upsampling of one decoder.
    pub fn upsampling_factor(&self) -> usize {
        self.first_up_stride() << (self.up_blocks - 1)
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::paper()
    }
}

#[derive(Clone, Debug)]
struct UpBlock {
    up: ConvTranspose1d,
    skip: Option<usize>,
    skip_channels: usize,
    conv_a: ConvBlock,
    conv_b: ConvBlock,
}

#[derive(Clone, Debug)]
struct Decoder {
    blocks: Vec<UpBlock>,
    out: Conv1d,
}

/// Network outputs: `modes` is `[B, decoders, L]` in the log-normalised
/// domain, `logits` is `[B, 1, decoders + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetOutput {
    pub modes: Tensor3,
    pub logits: Tensor3,
}

impl NetOutput {
    pub fn logits_of(&self, b: usize) -> &[f64] {
        self.logits.row(b, 0)
    }

    /// Predicted order per item (first maximum on ties).
    pub fn predicted_orders(&self) -> Vec<usize> {
        (0..self.logits.batch()).map(|b| crate::pdp::argmax(self.logits_of(b))).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Net {
    config: NetConfig,
    stem: Vec<ConvBlock>,
    encoder: Vec<ConvBlock>,
    latent_map: Linear,
    latent_bn: BatchNorm1d,
    latent_relu: Relu,
    decoders: Vec<Decoder>,
    head_conv: ConvBlock,
    head_fc: Vec<Linear>,
    head_relu: Vec<Relu>,
}

impl Net {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let stem = vec![
            ConvBlock::new(1, c.channels_at(0), 1, rng),
            ConvBlock::new(c.channels_at(0), c.channels_at(1), 2, rng),
        ];
        let encoder = (2..=c.encoder_blocks + 1)
            .map(|j| ConvBlock::new(c.channels_at(j - 1), c.channels_at(j), 2, rng))
            .collect();
        let lat_c = c.latent_channels();
        let latent_map = Linear::new(c.latent_length(), c.decoders * c.decoder_features, rng);
        let decoders = (0..c.decoders)
            .map(|_| {
                let mut blocks = Vec::with_capacity(c.up_blocks);
                let mut cin = lat_c;
                for u in 0..c.up_blocks {
                    let level = c.up_blocks - 1 - u;
                    let cout = c.channels_at(level);
                    let (stride, skip) = if u == 0 { (c.first_up_stride(), None) } else { (2, Some(level)) };
                    let skip_channels = if skip.is_some() { cout } else { 0 };
                    blocks.push(UpBlock {
                        up: ConvTranspose1d::new(cin, cout, stride, rng),
                        skip,
                        skip_channels,
                        conv_a: ConvBlock::new(cout + skip_channels, cout, 1, rng),
                        conv_b: ConvBlock::new(cout, cout, 1, rng),
                    });
                    cin = cout;
                }
                Decoder { blocks, out: Conv1d::new(cin, 1, 1, 1, 0, rng) }
            })
            .collect();
        let head_conv = ConvBlock::new(lat_c, c.head_channels, 1, rng);
        let flat = c.head_channels * c.latent_length();
        let head_fc = vec![
            Linear::new(flat, c.head_hidden[0], rng),
            Linear::new(c.head_hidden[0], c.head_hidden[1], rng),
            Linear::new(c.head_hidden[1], c.order_classes(), rng),
        ];
        Ok(Self {
            config,
            stem,
            encoder,
            latent_map,
            latent_bn: BatchNorm1d::new(lat_c),
            latent_relu: Relu::new(),
            decoders,
            head_conv,
            head_fc,
            head_relu: vec![Relu::new(), Relu::new()],
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor3) -> Result<()> {
        if x.channels() != 1 || x.length() != self.config.input_length {
            return Err(DmcError::shape(format!(
                "network input must be [B, 1, {}], got {:?}",
                self.config.input_length,
                x.dims()
            )));
        }
        Ok(())
    }

    /// Training-mode (`train = true`) or evaluation forward pass. Training
    /// mode caches activations for [`Net::backward`].
    pub fn forward(&mut self, x: &Tensor3, train: bool) -> Result<NetOutput> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.config.encoder_blocks + 2);
        let mut h = x.clone();
        for block in self.stem.iter_mut().chain(self.encoder.iter_mut()) {
            h = block.forward(&h, train)?;
            acts.push(h.clone());
        }
        let latent = h;
        let z = self.latent_map.forward(&latent, train)?;
        let z = self.latent_bn.forward(&z, train)?;
        let z = self.latent_relu.forward(&z, train)?;
        let f = self.config.decoder_features;
        let mut outs = Vec::with_capacity(self.decoders.len());
        for (d, dec) in self.decoders.iter_mut().enumerate() {
            let mut y = z.slice_length(d * f, f);
            for block in &mut dec.blocks {
                y = block.up.forward(&y, train)?;
                if let Some(level) = block.skip {
                    y = Tensor3::concat_channels(&y, &acts[level])?;
                }
                y = block.conv_a.forward(&y, train)?;
                y = block.conv_b.forward(&y, train)?;
            }
            outs.push(dec.out.forward(&y, train)?);
        }
        let mut g = self.head_conv.forward(&latent, train)?;
        let (b, gc, gl) = g.dims();
        g = g.reshaped(1, gc * gl)?;
        for i in 0..3 {
            g = self.head_fc[i].forward(&g, train)?;
            if i < 2 {
                g = self.head_relu[i].forward(&g, train)?;
            }
        }
        debug_assert_eq!(g.batch(), b);
        Ok(NetOutput { modes: Tensor3::stack_channels(&outs)?, logits: g })
    }

    /// Read-only evaluation pass (batch norm uses running statistics).
    pub fn infer(&self, x: &Tensor3) -> Result<NetOutput> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.config.encoder_blocks + 2);
        let mut h = x.clone();
        for block in self.stem.iter().chain(self.encoder.iter()) {
            h = block.infer(&h)?;
            acts.push(h.clone());
        }
        let latent = h;
        let z = self.latent_relu.infer(&self.latent_bn.infer(&self.latent_map.infer(&latent)?)?)?;
        let f = self.config.decoder_features;
        let mut outs = Vec::with_capacity(self.decoders.len());
        for (d, dec) in self.decoders.iter().enumerate() {
            let mut y = z.slice_length(d * f, f);
            for block in &dec.blocks {
                y = block.up.infer(&y)?;
                if let Some(level) = block.skip {
                    y = Tensor3::concat_channels(&y, &acts[level])?;
                }
                y = block.conv_b.infer(&block.conv_a.infer(&y)?)?;
            }
            outs.push(dec.out.infer(&y)?);
        }
        let g = self.head_conv.infer(&latent)?;
        let (_, gc, gl) = g.dims();
        let mut g = g.reshaped(1, gc * gl)?;
        for i in 0..3 {
            g = self.head_fc[i].infer(&g)?;
            if i < 2 {
                g = self.head_relu[i].infer(&g)?;
            }
        }
        Ok(NetOutput { modes: Tensor3::stack_channels(&outs)?, logits: g })
    }

    /// Back-propagates output gradients, accumulating into the parameter
    /// gradients. Decoders whose output gradient is identically zero are
    /// skipped; their parameter gradients stay exactly zero.
    pub fn backward(&mut self, dmodes: &Tensor3, dlogits: &Tensor3) -> Result<()> {
        let (b, _, l) = dmodes.dims();
        if dmodes.channels() != self.decoders.len() || l != self.config.input_length {
            return Err(DmcError::shape("mode gradient shape"));
        }
        if dlogits.dims() != (b, 1, self.config.order_classes()) {
            return Err(DmcError::shape("logit gradient shape"));
        }
        let levels = self.config.encoder_blocks + 2;
        let mut dacts: Vec<Option<Tensor3>> = vec![None; levels];
        let f = self.config.decoder_features;
        let mut dz_parts = Vec::with_capacity(self.decoders.len());
        for (d, dec) in self.decoders.iter_mut().enumerate() {
            let dy = dmodes.channel(d);
            if dy.data().iter().all(|v| *v == 0.0) {
                let (_, c, _) = dec.blocks[0].up_input_dims(b, f);
                dz_parts.push(Tensor3::zeros(b, c, f));
                continue;
            }
            let mut g = dec.out.backward(&dy)?;
            for block in dec.blocks.iter_mut().rev() {
                g = block.conv_b.backward(&g)?;
                g = block.conv_a.backward(&g)?;
                if let Some(level) = block.skip {
                    let (gu, gs) = g.split_channels(g.channels() - block.skip_channels);
                    accumulate(&mut dacts[level], gs);
                    g = gu;
                }
                g = block.up.backward(&g)?;
            }
            dz_parts.push(g);
        }
        let dz = Tensor3::concat_length(&dz_parts)?;
        let dz = self.latent_relu.backward(&dz)?;
        let dz = self.latent_bn.backward(&dz)?;
        let mut dlatent = self.latent_map.backward(&dz)?;

        let mut g = dlogits.clone();
        for i in (0..3).rev() {
            if i < 2 {
                g = self.head_relu[i].backward(&g)?;
            }
            g = self.head_fc[i].backward(&g)?;
        }
        let g = g.reshaped(self.config.head_channels, self.config.latent_length())?;
        dlatent.add_assign(&self.head_conv.backward(&g)?);

        let mut g = dlatent;
        for level in (0..levels).rev() {
            if let Some(extra) = dacts[level].take() {
                g.add_assign(&extra);
            }
            let block = if level < 2 { &mut self.stem[level] } else { &mut self.encoder[level - 2] };
            g = block.backward(&g)?;
        }
        Ok(())
    }

    pub fn visit_mut(&mut self, f: &mut ParamVisitor) {
        for (i, b) in self.stem.iter_mut().enumerate() {
            b.visit_mut(&format!("stem{i}"), f);
        }
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&format!("enc{i}"), f);
        }
        self.latent_map.visit_mut("latent.map", f);
        self.latent_bn.visit_mut("latent.bn", f);
        for (d, dec) in self.decoders.iter_mut().enumerate() {
            for (u, block) in dec.blocks.iter_mut().enumerate() {
                let p = format!("dec{d}.up{u}");
                block.up.visit_mut(&format!("{p}.tconv"), f);
                block.conv_a.visit_mut(&format!("{p}.conv_a"), f);
                block.conv_b.visit_mut(&format!("{p}.conv_b"), f);
            }
            dec.out.visit_mut(&format!("dec{d}.out"), f);
        }
        self.head_conv.visit_mut("head.conv", f);
        for (i, fc) in self.head_fc.iter_mut().enumerate() {
            fc.visit_mut(&format!("head.fc{i}"), f);
        }
    }

    pub fn visit(&self, f: &mut ParamReader) {
        for (i, b) in self.stem.iter().enumerate() {
            b.visit(&format!("stem{i}"), f);
        }
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&format!("enc{i}"), f);
        }
        self.latent_map.visit("latent.map", f);
        self.latent_bn.visit("latent.bn", f);
        for (d, dec) in self.decoders.iter().enumerate() {
            for (u, block) in dec.blocks.iter().enumerate() {
                let p = format!("dec{d}.up{u}");
                block.up.visit(&format!("{p}.tconv"), f);
                block.conv_a.visit(&format!("{p}.conv_a"), f);
                block.conv_b.visit(&format!("{p}.conv_b"), f);
            }
            dec.out.visit(&format!("dec{d}.out"), f);
        }
        self.head_conv.visit("head.conv", f);
        for (i, fc) in self.head_fc.iter().enumerate() {
            fc.visit(&format!("head.fc{i}"), f);
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut(&mut |_, p| p.zero_grad());
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p: &Param| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, p| ok &= p.value.iter().all(|v| v.is_finite()));
        ok
    }
}

impl UpBlock {
    fn up_input_dims(&self, batch: usize, length: usize) -> (usize, usize, usize) {
        (batch, self.up.in_channels(), length)
    }
}

fn accumulate(slot: &mut Option<Tensor3>, g: Tensor3) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::tests::random_tensor;
    use crate::nn::loss::{loss, LossGrad, LossWeights};

    #[test]
    fn shape_algebra() {
        let p = NetConfig::paper();
        p.validate().unwrap();
        assert_eq!(p.latent_length(), 16);
        assert_eq!(p.latent_channels(), 512);
        assert_eq!(p.downsampling_factor(), 32);
        assert_eq!(p.upsampling_factor(), 512 / 8);
        assert_eq!(p.first_up_stride(), 4);
        NetConfig::desk().validate().unwrap();
        NetConfig::tiny().validate().unwrap();
        let bad = NetConfig { input_length: 500, ..NetConfig::paper() };
        assert!(bad.validate().is_err());
        let deep = NetConfig { up_blocks: 7, decoder_features: 2, ..NetConfig::paper() };
        assert!(deep.validate().is_err());
    }

    #[test]
    fn output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for cfg in [NetConfig::tiny(), NetConfig::desk()] {
            let mut net = Net::new(cfg.clone(), 3).unwrap();
            for b in [1, 2] {
                let x = random_tensor(b, 1, cfg.input_length, &mut rng);
                let out = net.forward(&x, true).unwrap();
                assert_eq!(out.modes.dims(), (b, 3, cfg.input_length));
                assert_eq!(out.logits.dims(), (b, 1, 4));
                assert_eq!(net.infer(&x).unwrap().modes.dims(), (b, 3, cfg.input_length));
            }
        }
        let net = Net::new(NetConfig::tiny(), 3).unwrap();
        assert!(net.infer(&Tensor3::zeros(1, 1, 31)).is_err());
    }

    #[test]
    fn eval_is_batch_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Net::new(NetConfig::tiny(), 4).unwrap();
        // move the running statistics away from their initial values
        for _ in 0..3 {
            net.forward(&random_tensor(4, 1, 32, &mut rng), true).unwrap();
        }
        let x = random_tensor(8, 1, 32, &mut rng);
        let all = net.infer(&x).unwrap();
        for b in 0..8 {
            let one = net.infer(&x.select(b)).unwrap();
            let diff = one
                .modes
                .data()
                .iter()
                .zip(all.modes.item(b))
                .chain(one.logits.data().iter().zip(all.logits.item(b)))
                .map(|(a, c)| (a - c).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-10);
        }
    }

    #[test]
    fn zero_input_is_finite() {
        let net = Net::new(NetConfig::desk(), 5).unwrap();
        let out = net.infer(&Tensor3::zeros(2, 1, 512)).unwrap();
        assert!(out.modes.is_finite() && out.logits.is_finite());
    }

    #[test]
    fn parameter_names_are_unique() {
        let net = Net::new(NetConfig::tiny(), 0).unwrap();
        let mut names = Vec::new();
        net.visit(&mut |n, _| names.push(n.to_string()));
        let count = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), count);
        assert!(net.parameter_count() > 0);
    }

    fn batch_loss(net: &mut Net, x: &Tensor3, t: &Tensor3, orders: &[usize]) -> (f64, LossGrad) {
        let out = net.forward(x, true).unwrap();
        let (v, g) = loss(&out, t, orders, LossWeights::default()).unwrap();
        (v.total(), g)
    }

    fn tiny_batch(rng: &mut ChaCha8Rng) -> (Tensor3, Tensor3, Vec<usize>) {
        let x = random_tensor(3, 1, 32, rng);
        let t = random_tensor(3, 3, 32, rng);
        (x, t, vec![0, 2, 3])
    }

    #[test]
    fn end_to_end_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Net::new(NetConfig::tiny(), 10).unwrap();
        // predict order 3 everywhere so that every decoder is exercised
        net.visit_mut(&mut |n, p| {
            if n == "head.fc2.bias" {
                p.value[3] = 5.0;
            }
        });
        let (x, t, orders) = tiny_batch(&mut rng);
        net.zero_grad();
        let (_, g) = batch_loss(&mut net, &x, &t, &orders);
        net.backward(&g.dmodes, &g.dlogits).unwrap();
        let mut analytic = Vec::new();
        net.visit(&mut |n, p| {
            if p.trainable {
                analytic.push((n.to_string(), p.grad.clone()));
            }
        });
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (name, grad) in &analytic {
            for (j, gj) in grad.iter().enumerate() {
                let shift = |net: &mut Net, delta: f64| {
                    net.visit_mut(&mut |n, p| {
                        if n == name {
                            p.value[j] += delta
                        }
                    })
                };
                shift(&mut net, h);
                let lp = batch_loss(&mut net, &x, &t, &orders).0;
                shift(&mut net, -2.0 * h);
                let lm = batch_loss(&mut net, &x, &t, &orders).0;
                shift(&mut net, h);
                let fd = (lp - lm) / (2.0 * h);
                worst = worst.max((fd - gj).abs() / (fd.abs() + gj.abs()).max(1e-4));
            }
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn masked_decoders_have_zero_parameter_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut net = Net::new(NetConfig::tiny(), 13).unwrap();
        net.visit_mut(&mut |n, p| {
            if n == "head.fc2.bias" {
                p.value[1] = 50.0;
            }
        });
        let (x, t, orders) = tiny_batch(&mut rng);
        net.zero_grad();
        let (_, g) = batch_loss(&mut net, &x, &t, &orders);
        net.backward(&g.dmodes, &g.dlogits).unwrap();
        let mut norms = std::collections::BTreeMap::new();
        net.visit(&mut |n, p| {
            if let Some(d) = n.strip_prefix("dec").and_then(|r| r.chars().next()) {
                *norms.entry(d).or_insert(0.0) += p.grad.iter().map(|g| g * g).sum::<f64>();
            }
        });
        assert!(norms[&'0'] > 0.0);
        assert_eq!(norms[&'1'], 0.0);
        assert_eq!(norms[&'2'], 0.0);
    }
}
