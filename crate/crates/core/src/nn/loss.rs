//! Masked composite loss: squared error on the decoders below the predicted
//! order plus weighted categorical cross-entropy on the order logits.

use serde::{Deserialize, Serialize};

use super::net::NetOutput;
use super::tensor::Tensor3;
use crate::error::{DmcError, Result};
use crate::pdp::argmax;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_x: f64,
    pub w_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_x: 1.0, w_m: 100.0 }
    }
}

/// Batch-averaged loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub mode: f64,
    pub order: f64,
}

impl LossValue {
    pub fn total(&self) -> f64 {
        self.mode + self.order
    }
}

/// Gradients of the batch-averaged total with respect to the outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub dmodes: Tensor3,
    pub dlogits: Tensor3,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Loss of a batch. `targets` holds the per-decoder targets in the network
/// output domain, `orders` the true model orders. The mask uses the
/// predicted order `argmax(logits)` and is constant for differentiation.
pub fn loss(out: &NetOutput, targets: &Tensor3, orders: &[usize], w: LossWeights) -> Result<(LossValue, LossGrad)> {
    let (b, d, l) = out.modes.dims();
    if targets.dims() != (b, d, l) {
        return Err(DmcError::shape(format!("targets {:?} vs outputs {:?}", targets.dims(), out.modes.dims())));
    }
    let classes = out.logits.length();
    if out.logits.dims() != (b, 1, classes) || orders.len() != b {
        return Err(DmcError::shape("logits or order labels do not match the batch"));
    }
    if let Some(&bad) = orders.iter().find(|&&m| m >= classes) {
        return Err(DmcError::param(format!("order label {bad} out of range")));
    }
    let inv_b = 1.0 / b as f64;
    let mut value = LossValue { mode: 0.0, order: 0.0 };
    let mut dmodes = Tensor3::zeros(b, d, l);
    let mut dlogits = Tensor3::zeros(b, 1, classes);
    for i in 0..b {
        let logits = out.logits_of(i);
        let predicted = argmax(logits).min(d);
        for k in 0..predicted {
            let (x, t) = (out.modes.row(i, k), targets.row(i, k));
            let g = dmodes.row_mut(i, k);
            for j in 0..l {
                let r = x[j] - t[j];
                value.mode += w.w_x * r * r * inv_b;
                g[j] = 2.0 * w.w_x * r * inv_b;
            }
        }
        let p = softmax(logits);
        value.order -= w.w_m * p[orders[i]].ln() * inv_b;
        for (c, g) in dlogits.row_mut(i, 0).iter_mut().enumerate() {
            let onehot = if c == orders[i] { 1.0 } else { 0.0 };
            *g = w.w_m * (p[c] - onehot) * inv_b;
        }
    }
    Ok((value, LossGrad { dmodes, dlogits }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn output(modes: Vec<f64>, logits: Vec<f64>, l: usize) -> NetOutput {
        let b = logits.len() / 4;
        NetOutput { modes: Tensor3::new(b, 3, l, modes).unwrap(), logits: Tensor3::new(b, 1, 4, logits).unwrap() }
    }

    #[test]
    fn scalar_oracle_two_bins() {
        // predicted order 2 (logit index 2 largest), true order 1
        let out = output(vec![0.5, -1.0, -2.0, 0.25, 7.0, 9.0], vec![0.1, 0.3, 1.2, -0.4], 2);
        let t = Tensor3::new(1, 3, 2, vec![0.0, -0.5, -1.0, -1.0, 0.0, 0.0]).unwrap();
        let (v, g) = loss(&out, &t, &[1], LossWeights::default()).unwrap();
        let mode = 0.5f64.powi(2) + 0.5f64.powi(2) + 1.0 + 1.25f64.powi(2);
        let z = 0.1f64.exp() + 0.3f64.exp() + 1.2f64.exp() + (-0.4f64).exp();
        let order = -100.0 * (0.3f64.exp() / z).ln();
        assert!((v.mode - mode).abs() < 1e-12);
        assert!((v.order - order).abs() < 1e-12);
        assert!((v.total() - mode - order).abs() < 1e-12);
        assert_eq!(g.dmodes.row(0, 0), &[1.0, -1.0]);
        assert_eq!(g.dmodes.row(0, 2), &[0.0, 0.0]);
        assert!((g.dlogits.data()[1] - 100.0 * (0.3f64.exp() / z - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_vanishes() {
        let x = vec![0.0, -1.0, -2.0, -3.0, -4.0, -5.0];
        let out = output(x.clone(), vec![-50.0, -50.0, -50.0, 50.0], 2);
        let t = Tensor3::new(1, 3, 2, x).unwrap();
        let (v, _) = loss(&out, &t, &[3], LossWeights::default()).unwrap();
        assert!(v.mode == 0.0 && v.order < 1e-30);
    }

    #[test]
    fn masked_decoders_get_no_gradient() {
        let out = output(vec![1.0; 6 * 2], vec![0.0, 0.0, 5.0, 0.0, 9.0, 0.0, 0.0, 0.0], 2);
        let t = Tensor3::zeros(2, 3, 2);
        let (_, g) = loss(&out, &t, &[2, 0], LossWeights::default()).unwrap();
        assert!(g.dmodes.row(0, 2).iter().all(|v| *v == 0.0));
        assert!(g.dmodes.row(0, 1).iter().all(|v| *v != 0.0));
        assert!(g.dmodes.item(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_labels() {
        let out = output(vec![0.0; 6], vec![0.0; 4], 2);
        let t = Tensor3::zeros(1, 3, 2);
        assert!(loss(&out, &t, &[4], LossWeights::default()).is_err());
        assert!(loss(&out, &Tensor3::zeros(1, 3, 3), &[0], LossWeights::default()).is_err());
    }
}
