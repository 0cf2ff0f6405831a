//! Layers with explicit forward and backward passes.
//!
//! `forward` with `train = true` caches what `backward` needs and, for batch
//! normalisation, uses batch statistics and updates the running ones.
//! `infer` is the read-only evaluation pass.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor3;
use crate::error::{DmcError, Result};
use crate::gemm::dgemm;

/// A named array of weights with its gradient accumulator. Batch-norm
/// running statistics are stored as non-trainable parameters so that a
/// checkpoint captures the whole state.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub dims: Vec<usize>,
    pub trainable: bool,
}

impl Param {
    fn new(dims: Vec<usize>, value: Vec<f64>, trainable: bool) -> Self {
        debug_assert_eq!(value.len(), dims.iter().product::<usize>());
        let grad = vec![0.0; value.len()];
        Self { value, grad, dims, trainable }
    }

    fn he(dims: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Self {
        let n: usize = dims.iter().product();
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        Self::new(dims, (0..n).map(|_| dist.sample(rng)).collect(), true)
    }

    fn filled(dims: Vec<usize>, v: f64, trainable: bool) -> Self {
        let n = dims.iter().product();
        Self::new(dims, vec![v; n], trainable)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

pub type ParamVisitor<'a> = dyn FnMut(&str, &mut Param) + 'a;
pub type ParamReader<'a> = dyn FnMut(&str, &Param) + 'a;

pub trait Layer {
    fn forward(&mut self, x: &Tensor3, train: bool) -> Result<Tensor3>;
    fn infer(&self, x: &Tensor3) -> Result<Tensor3>;
    /// Accumulates parameter gradients and returns the input gradient. Must
    /// follow a training-mode `forward`.
    fn backward(&mut self, dy: &Tensor3) -> Result<Tensor3>;
    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitor);
    fn visit(&self, prefix: &str, f: &mut ParamReader);
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn take_cache<T>(cache: &mut Option<T>) -> Result<T> {
    cache.take().ok_or_else(|| DmcError::shape("backward called without a training forward pass"))
}

/// 1-D convolution with circular padding. Weights `[out, in, kernel]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    weight: Param,
    bias: Param,
    cache: Option<ConvCache>,
}

#[derive(Clone, Debug)]
struct ConvCache {
    cols: Vec<f64>,
    batch: usize,
    lin: usize,
}

impl Conv1d {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        assert!(cin > 0 && cout > 0 && k > 0 && stride > 0);
        Self {
            cin,
            cout,
            k,
            stride,
            pad,
            weight: Param::he(vec![cout, cin, k], cin * k, rng),
            bias: Param::filled(vec![cout], 0.0, true),
            cache: None,
        }
    }

    pub fn out_length(&self, lin: usize) -> usize {
        (lin + 2 * self.pad - self.k) / self.stride + 1
    }

    fn check(&self, x: &Tensor3) -> Result<usize> {
        if x.channels() != self.cin {
            return Err(DmcError::shape(format!("conv expects {} channels, got {}", self.cin, x.channels())));
        }
        if x.length() + 2 * self.pad < self.k || self.pad > x.length() {
            return Err(DmcError::shape(format!("conv input length {} too short", x.length())));
        }
        Ok(self.out_length(x.length()))
    }

    /// Output positions `[0, split)` read `start + o s`, the rest wrap
    /// around and read `start + o s - L`, where `start = (t - p) mod L`.
    fn taps(&self, t: usize, lin: usize, lout: usize) -> (usize, usize) {
        let start = (t + lin - self.pad) % lin;
        let split = ((lin - start).div_ceil(self.stride)).min(lout);
        (start, split)
    }

    /// Batched im2col: `cols[(ci k + t), b L' + o] = x[b, ci, (o s + t - p) mod L]`.
    fn im2col(&self, x: &Tensor3, lout: usize) -> Vec<f64> {
        let (b, lin, s) = (x.batch(), x.length(), self.stride);
        let mut cols = Vec::with_capacity(self.cin * self.k * b * lout);
        for ci in 0..self.cin {
            for t in 0..self.k {
                let (start, split) = self.taps(t, lin, lout);
                for i in 0..b {
                    let row = x.row(i, ci);
                    if s == 1 {
                        cols.extend_from_slice(&row[start..start + split]);
                        cols.extend_from_slice(&row[..lout - split]);
                    } else {
                        cols.extend((0..split).map(|o| row[start + o * s]));
                        cols.extend((split..lout).map(|o| row[start + o * s - lin]));
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], dx: &mut Tensor3, lout: usize) {
        let (b, lin, s) = (dx.batch(), dx.length(), self.stride);
        let width = b * lout;
        for ci in 0..self.cin {
            for t in 0..self.k {
                let (start, split) = self.taps(t, lin, lout);
                for i in 0..b {
                    let off = (ci * self.k + t) * width + i * lout;
                    let src = &cols[off..off + lout];
                    let row = dx.row_mut(i, ci);
                    for (o, v) in src[..split].iter().enumerate() {
                        row[start + o * s] += v;
                    }
                    for (o, v) in src[split..].iter().enumerate() {
                        row[start + (o + split) * s - lin] += v;
                    }
                }
            }
        }
    }

    fn compute(&self, x: &Tensor3) -> Result<(Tensor3, Vec<f64>)> {
        let lout = self.check(x)?;
        let b = x.batch();
        let ck = self.cin * self.k;
        let cols = self.im2col(x, lout);
        let mut data = Vec::with_capacity(b * self.cout * lout);
        for _ in 0..b {
            for &bias in &self.bias.value {
                data.extend(std::iter::repeat_n(bias, lout));
            }
        }
        let mut y = Tensor3::new(b, self.cout, lout, data)?;
        // y[b, co, o] is not a single strided view of the column index
        // b L' + o, so one gemm per batch item
        for i in 0..b {
            let out = y.item_mut(i);
            dgemm(
                self.cout,
                ck,
                lout,
                1.0,
                &self.weight.value,
                (ck, 1),
                &cols[i * lout..],
                (b * lout, 1),
                1.0,
                out,
                (lout, 1),
            );
        }
        Ok((y, cols))
    }
}

impl Layer for Conv1d {
    fn forward(&mut self, x: &Tensor3, train: bool) -> Result<Tensor3> {
        let (y, cols) = self.compute(x)?;
        if train {
            self.cache = Some(ConvCache { cols, batch: x.batch(), lin: x.length() });
        }
        Ok(y)
    }

    fn infer(&self, x: &Tensor3) -> Result<Tensor3> {
        Ok(self.compute(x)?.0)
    }

    fn backward(&mut self, dy: &Tensor3) -> Result<Tensor3> {
        let ConvCache { cols, batch: b, lin } = take_cache(&mut self.cache)?;
        let lout = self.out_length(lin);
        if dy.dims() != (b, self.cout, lout) {
            return Err(DmcError::shape("conv backward: gradient shape"));
        }
        let ck = self.cin * self.k;
        let width = b * lout;
        // gradient rearranged to [cout, b L' + o]
        let mut g = Vec::with_capacity(self.cout * width);
        for co in 0..self.cout {
            let mut sum = 0.0;
            for i in 0..b {
                let row = dy.row(i, co);
                sum += row.iter().sum::<f64>();
                g.extend_from_slice(row);
            }
            self.bias.grad[co] += sum;
        }
        // dW += G cols^T, dcols = W^T G
        dgemm(self.cout, width, ck, 1.0, &g, (width, 1), &cols, (1, width), 1.0, &mut self.weight.grad, (ck, 1));
        let mut dcols = cols;
        dgemm(ck, self.cout, width, 1.0, &self.weight.value, (1, ck), &g, (width, 1), 0.0, &mut dcols, (width, 1));
        let mut dx = Tensor3::zeros(b, self.cin, lin);
        self.col2im(&dcols, &mut dx, lout);
        Ok(dx)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }

    fn visit(&self, prefix: &str, f: &mut ParamReader) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
}

/// Transposed convolution with kernel equal to stride (no overlap, no
/// padding): output length is `stride * L`. Weights `[in, out, kernel]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    cin: usize,
    cout: usize,
    stride: usize,
    weight: Param,
    bias: Param,
    cache: Option<Tensor3>,
}

impl ConvTranspose1d {
    pub fn new(cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        assert!(cin > 0 && cout > 0 && stride > 0);
        Self {
            cin,
            cout,
            stride,
            weight: Param::he(vec![cin, cout, stride], cin, rng),
            bias: Param::filled(vec![cout], 0.0, true),
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.cin
    }

    fn compute(&self, x: &Tensor3) -> Result<Tensor3> {
        if x.channels() != self.cin {
            return Err(DmcError::shape(format!("tconv expects {} channels, got {}", self.cin, x.channels())));
        }
        let (b, lin, s) = (x.batch(), x.length(), self.stride);
        let rows = self.cout * s;
        let mut z = vec![0.0; rows * lin];
        let mut y = Tensor3::zeros(b, self.cout, lin * s);
        for i in 0..b {
            // z[(co s + t), i] = sum_ci W[ci, co, t] x[ci, i]
            dgemm(rows, self.cin, lin, 1.0, &self.weight.value, (1, rows), x.item(i), (lin, 1), 0.0, &mut z, (lin, 1));
            let out = y.item_mut(i);
            for co in 0..self.cout {
                let bias = self.bias.value[co];
                let row = &mut out[co * lin * s..(co + 1) * lin * s];
                for t in 0..s {
                    let zr = &z[(co * s + t) * lin..(co * s + t + 1) * lin];
                    for (j, v) in zr.iter().enumerate() {
                        row[j * s + t] = v + bias;
                    }
                }
            }
        }
        Ok(y)
    }
}

impl Layer for ConvTranspose1d {
    fn forward(&mut self, x: &Tensor3, train: bool) -> Result<Tensor3> {
        let y = self.compute(x)?;
        if train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    fn infer(&self, x: &Tensor3) -> Result<Tensor3> {
        self.compute(x)
    }

    fn backward(&mut self, dy: &Tensor3) -> Result<Tensor3> {
        let x = take_cache(&mut self.cache)?;
        let (b, lin, s) = (x.batch(), x.length(), self.stride);
        if dy.dims() != (b, self.cout, lin * s) {
            return Err(DmcError::shape("tconv backward: gradient shape"));
        }
        let rows = self.cout * s;
        let mut dz = vec![0.0; rows * lin];
        let mut dx = Tensor3::zeros(b, self.cin, lin);
        for i in 0..b {
            let g = dy.item(i);
            for co in 0..self.cout {
                let row = &g[co * lin * s..(co + 1) * lin * s];
                self.bias.grad[co] += row.iter().sum::<f64>();
                for t in 0..s {
                    let dzr = &mut dz[(co * s + t) * lin..(co * s + t + 1) * lin];
                    for (j, v) in dzr.iter_mut().enumerate() {
                        *v = row[j * s + t];
                    }
                }
            }
            // dW (in x out*k) += x dz^T ; dx = W dz
            dgemm(self.cin, lin, rows, 1.0, x.item(i), (lin, 1), &dz, (1, lin), 1.0, &mut self.weight.grad, (rows, 1));
            dgemm(
                self.cin,
                rows,
                lin,
                1.0,
                &self.weight.value,
                (rows, 1),
                &dz,
                (lin, 1),
                0.0,
                dx.item_mut(i),
                (lin, 1),
            );
        }
        Ok(dx)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }

    fn visit(&self, prefix: &str, f: &mut ParamReader) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
}

/// Affine map along the length axis, shared over batch and channels:
/// `y[b, c, :] = W x[b, c, :] + bias`. With a single channel this is an
/// ordinary fully-connected layer. Weights `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    nin: usize,
    nout: usize,
    weight: Param,
    bias: Param,
    cache: Option<Tensor3>,
}

impl Linear {
    pub fn new(nin: usize, nout: usize, rng: &mut impl Rng) -> Self {
        assert!(nin > 0 && nout > 0);
        Self {
            nin,
            nout,
            weight: Param::he(vec![nout, nin], nin, rng),
            bias: Param::filled(vec![nout], 0.0, true),
            cache: None,
        }
    }

    fn compute(&self, x: &Tensor3) -> Result<Tensor3> {
        if x.length() != self.nin {
            return Err(DmcError::shape(format!("linear expects length {}, got {}", self.nin, x.length())));
        }
        let rows = x.batch() * x.channels();
        let mut y = Tensor3::zeros(x.batch(), x.channels(), self.nout);
        for row in y.data_mut().chunks_exact_mut(self.nout) {
            row.copy_from_slice(&self.bias.value);
        }
        dgemm(
            rows,
            self.nin,
            self.nout,
            1.0,
            x.data(),
            (self.nin, 1),
            &self.weight.value,
            (1, self.nin),
            1.0,
            y.data_mut(),
            (self.nout, 1),
        );
        Ok(y)
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Tensor3, train: bool) -> Result<Tensor3> {
        let y = self.compute(x)?;
        if train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    fn infer(&self, x: &Tensor3) -> Result<Tensor3> {
        self.compute(x)
    }

    fn backward(&mut self, dy: &Tensor3) -> Result<Tensor3> {
        let x = take_cache(&mut self.cache)?;
        if dy.dims() != (x.batch(), x.channels(), self.nout) {
            return Err(DmcError::shape("linear backward: gradient shape"));
        }
        let rows = x.batch() * x.channels();
        for row in dy.data().chunks_exact(self.nout) {
            self.bias.grad.iter_mut().zip(row).for_each(|(g, v)| *g += v);
        }
        dgemm(
            self.nout,
            rows,
            self.nin,
            1.0,
            dy.data(),
            (1, self.nout),
            x.data(),
            (self.nin, 1),
            1.0,
            &mut self.weight.grad,
            (self.nin, 1),
        );
        let mut dx = Tensor3::zeros(x.batch(), x.channels(), self.nin);
        dgemm(
            rows,
            self.nout,
            self.nin,
            1.0,
            dy.data(),
            (self.nout, 1),
            &self.weight.value,
            (self.nin, 1),
            0.0,
            dx.data_mut(),
            (self.nin, 1),
        );
        Ok(dx)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }

    fn visit(&self, prefix: &str, f: &mut ParamReader) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
}

/// Per-channel batch normalisation over batch and length.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    channels: usize,
    eps: f64,
    momentum: f64,
    gamma: Param,
    beta: Param,
    running_mean: Param,
    running_var: Param,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    xhat: Tensor3,
    inv_std: Vec<f64>,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma: Param::filled(vec![channels], 1.0, true),
            beta: Param::filled(vec![channels], 0.0, true),
            running_mean: Param::filled(vec![channels], 0.0, false),
            running_var: Param::filled(vec![channels], 1.0, false),
            cache: None,
        }
    }

    fn check(&self, x: &Tensor3) -> Result<()> {
        if x.channels() != self.channels {
            return Err(DmcError::shape(format!("batchnorm expects {} channels, got {}", self.channels, x.channels())));
        }
        Ok(())
    }

    fn apply(&self, x: &Tensor3, mean: &[f64], inv_std: &[f64]) -> (Tensor3, Tensor3) {
        let mut xhat = x.clone();
        let mut y = x.clone();
        for b in 0..x.batch() {
            for c in 0..self.channels {
                let (g, be) = (self.gamma.value[c], self.beta.value[c]);
                let xr = xhat.row_mut(b, c);
                xr.iter_mut().for_each(|v| *v = (*v - mean[c]) * inv_std[c]);
                let xr = xhat.row(b, c).to_vec();
                y.row_mut(b, c).iter_mut().zip(&xr).for_each(|(v, h)| *v = g * h + be);
            }
        }
        (y, xhat)
    }
}

impl Layer for BatchNorm1d {
    fn forward(&mut self, x: &Tensor3, train: bool) -> Result<Tensor3> {
        if !train {
            return self.infer(x);
        }
        self.check(x)?;
        let n = (x.batch() * x.length()) as f64;
        let mut mean = vec![0.0; self.channels];
        let mut var = vec![0.0; self.channels];
        for b in 0..x.batch() {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += x.row(b, c).iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for b in 0..x.batch() {
            for (c, v) in var.iter_mut().enumerate() {
                *v += x.row(b, c).iter().map(|x| (x - mean[c]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (y, xhat) = self.apply(x, &mean, &inv_std);
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.channels {
            let rm = &mut self.running_mean.value[c];
            *rm = (1.0 - self.momentum) * *rm + self.momentum * mean[c];
            let rv = &mut self.running_var.value[c];
            *rv = (1.0 - self.momentum) * *rv + self.momentum * var[c] * unbias;
        }
        self.cache = Some(BnCache { xhat, inv_std });
        Ok(y)
    }

    fn infer(&self, x: &Tensor3) -> Result<Tensor3> {
        self.check(x)?;
        let inv_std: Vec<f64> = self.running_var.value.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        Ok(self.apply(x, &self.running_mean.value, &inv_std).0)
    }

    fn backward(&mut self, dy: &Tensor3) -> Result<Tensor3> {
        let BnCache { xhat, inv_std } = take_cache(&mut self.cache)?;
        if dy.dims() != xhat.dims() {
            return Err(DmcError::shape("batchnorm backward: gradient shape"));
        }
        let n = (xhat.batch() * xhat.length()) as f64;
        let mut sum_dy = vec![0.0; self.channels];
        let mut sum_dy_xhat = vec![0.0; self.channels];
        for b in 0..xhat.batch() {
            for c in 0..self.channels {
                let (g, h) = (dy.row(b, c), xhat.row(b, c));
                sum_dy[c] += g.iter().sum::<f64>();
                sum_dy_xhat[c] += g.iter().zip(h).map(|(g, h)| g * h).sum::<f64>();
            }
        }
        for c in 0..self.channels {
            self.beta.grad[c] += sum_dy[c];
            self.gamma.grad[c] += sum_dy_xhat[c];
        }
        let mut dx = Tensor3::zeros(xhat.batch(), self.channels, xhat.length());
        for b in 0..xhat.batch() {
            for c in 0..self.channels {
                let k = self.gamma.value[c] * inv_std[c] / n;
                let (g, h) = (dy.row(b, c), xhat.row(b, c));
                for ((d, g), h) in dx.row_mut(b, c).iter_mut().zip(g).zip(h) {
                    *d = k * (n * g - sum_dy[c] - h * sum_dy_xhat[c]);
                }
            }
        }
        Ok(dx)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }

    fn visit(&self, prefix: &str, f: &mut ParamReader) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    cache: Option<Tensor3>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor3, train: bool) -> Result<Tensor3> {
        let y = self.infer(x)?;
        if train {
            self.cache = Some(y.clone());
        }
        Ok(y)
    }

    fn infer(&self, x: &Tensor3) -> Result<Tensor3> {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor3) -> Result<Tensor3> {
        let y = take_cache(&mut self.cache)?;
        if dy.dims() != y.dims() {
            return Err(DmcError::shape("relu backward: gradient shape"));
        }
        let mut dx = dy.clone();
        dx.data_mut().iter_mut().zip(y.data()).for_each(|(d, y)| {
            if *y <= 0.0 {
                *d = 0.0
            }
        });
        Ok(dx)
    }

    fn visit_mut(&mut self, _: &str, _: &mut ParamVisitor) {}

    fn visit(&self, _: &str, _: &mut ParamReader) {}
}

/// Convolution, batch normalisation and ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv1d,
    bn: BatchNorm1d,
    relu: Relu,
}

impl ConvBlock {
    pub fn new(cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        Self { conv: Conv1d::new(cin, cout, 3, stride, 1, rng), bn: BatchNorm1d::new(cout), relu: Relu::new() }
    }
}

impl Layer for ConvBlock {
    fn forward(&mut self, x: &Tensor3, train: bool) -> Result<Tensor3> {
        let y = self.conv.forward(x, train)?;
        let y = self.bn.forward(&y, train)?;
        self.relu.forward(&y, train)
    }

    fn infer(&self, x: &Tensor3) -> Result<Tensor3> {
        self.relu.infer(&self.bn.infer(&self.conv.infer(x)?)?)
    }

    fn backward(&mut self, dy: &Tensor3) -> Result<Tensor3> {
        let d = self.relu.backward(dy)?;
        let d = self.bn.backward(&d)?;
        self.conv.backward(&d)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitor) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }

    fn visit(&self, prefix: &str, f: &mut ParamReader) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }
}
