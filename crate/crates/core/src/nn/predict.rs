//! Inference on a residual observation.

use serde::{Deserialize, Serialize};

use super::net::Net;
use super::tensor::Tensor3;
use crate::error::{DmcError, Result};
use crate::model::ChannelObservation;
use crate::pdp::{normalize, preprocess, rescale_log, Pdp};

/// Predicted model order and the separated, denoised mode profiles in the
/// linear domain (units of [`preprocess`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub order: usize,
    pub separations: Vec<Pdp>,
    pub logits: Vec<f64>,
    pub scale: f64,
}

pub fn predict(net: &Net, residual: &ChannelObservation) -> Result<Prediction> {
    let n = net.config().input_length;
    if residual.n_f() != n {
        return Err(DmcError::shape(format!("network expects {n} frequency bins, got {}", residual.n_f())));
    }
    let d = normalize(&preprocess(residual))?;
    let scale = d.scale();
    let x = Tensor3::new(1, 1, n, d.into_values())?;
    let out = net.infer(&x)?;
    let order = out.predicted_orders()[0].min(net.config().decoders);
    let separations =
        (0..order).map(|k| Pdp::linear(rescale_log(out.modes.row(0, k), scale))).collect::<Result<Vec<_>>>()?;
    Ok(Prediction { order, separations, logits: out.logits_of(0).to_vec(), scale })
}
