//! Weight snapshots and their on-disk form: a directory holding a JSON
//! manifest and one DMCT file per tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Net, NetConfig};
use crate::error::{DmcError, Result};
use crate::tensor_io::Tensor;

pub const WEIGHTS_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

/// Every named tensor of a network, batch-norm running statistics included.
#[derive(Clone, Debug, PartialEq)]
pub struct NetWeights {
    pub version: u32,
    pub config: NetConfig,
    pub tensors: Vec<(String, Tensor)>,
    pub parameter_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
}

/// Optimiser state saved next to the weights so that training can resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub seed: u64,
    pub stream_position: u64,
    pub adam_steps: u64,
    #[serde(skip)]
    pub moments: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    net_config: NetConfig,
    parameter_count: usize,
    tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TrainManifest>,
}

#[derive(Serialize, Deserialize)]
struct TrainManifest {
    #[serde(flatten)]
    state: TrainState,
    tensors: Vec<TensorEntry>,
}

impl Net {
    pub fn weights(&self) -> NetWeights {
        let mut tensors = Vec::new();
        self.visit(&mut |name, p| {
            let t = Tensor::real(p.dims.clone(), p.value.clone()).expect("parameter dims match values");
            tensors.push((name.to_string(), t));
        });
        NetWeights {
            version: WEIGHTS_VERSION,
            config: self.config().clone(),
            tensors,
            parameter_count: self.parameter_count(),
        }
    }

    pub fn from_weights(w: &NetWeights) -> Result<Self> {
        if w.version != WEIGHTS_VERSION {
            return Err(DmcError::Format(format!("unsupported weights version {}", w.version)));
        }
        let mut net = Net::new(w.config.clone(), 0)?;
        let mut err = None;
        let mut seen = 0;
        net.visit_mut(&mut |name, p| {
            let Some((_, t)) = w.tensors.iter().find(|(n, _)| n == name) else {
                err.get_or_insert_with(|| DmcError::Format(format!("missing tensor {name}")));
                return;
            };
            seen += 1;
            if t.dims() != p.dims.as_slice() {
                err.get_or_insert_with(|| DmcError::shape(format!("{name}: dims {:?} vs {:?}", t.dims(), p.dims)));
                return;
            }
            match t.clone().into_real() {
                Ok(v) if v.iter().all(|x| x.is_finite()) => p.value = v,
                Ok(_) => {
                    err.get_or_insert_with(|| DmcError::Format(format!("{name}: non-finite weights")));
                }
                Err(e) => {
                    err.get_or_insert(e);
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != w.tensors.len() {
            return Err(DmcError::Format("unexpected extra tensors in weights".into()));
        }
        Ok(net)
    }
}

fn write_tensors(dir: &Path, prefix: &str, tensors: &[(String, Tensor)]) -> Result<Vec<TensorEntry>> {
    tensors
        .iter()
        .map(|(name, t)| {
            let file = format!("{prefix}{name}.dmct");
            t.save(dir.join(&file))?;
            Ok(TensorEntry { name: name.clone(), file })
        })
        .collect()
}

fn read_tensors(dir: &Path, entries: &[TensorEntry]) -> Result<Vec<(String, Tensor)>> {
    entries
        .iter()
        .map(|e| {
            if e.file.contains('/') || e.file.contains('\\') || e.file.starts_with("..") {
                return Err(DmcError::Format(format!("tensor file {} escapes the checkpoint", e.file)));
            }
            Ok((e.name.clone(), Tensor::load(dir.join(&e.file))?))
        })
        .collect()
}

/// Writes weights (and optionally optimiser state) into `dir`.
pub fn save_checkpoint(dir: impl AsRef<Path>, w: &NetWeights, training: Option<&TrainState>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let tensors = write_tensors(dir, "", &w.tensors)?;
    let training = match training {
        Some(s) => Some(TrainManifest { state: s.clone(), tensors: write_tensors(dir, "adam.", &s.moments)? }),
        None => None,
    };
    let manifest = Manifest {
        format_version: w.version,
        net_config: w.config.clone(),
        parameter_count: w.parameter_count,
        tensors,
        training,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(NetWeights, Option<TrainState>)> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    manifest.net_config.validate()?;
    let weights = NetWeights {
        version: manifest.format_version,
        config: manifest.net_config,
        tensors: read_tensors(dir, &manifest.tensors)?,
        parameter_count: manifest.parameter_count,
    };
    let training = match manifest.training {
        Some(t) => Some(TrainState { moments: read_tensors(dir, &t.tensors)?, ..t.state }),
        None => None,
    };
    Ok((weights, training))
}

/// Loads a network for inference.
pub fn load_net(dir: impl AsRef<Path>) -> Result<Net> {
    Net::from_weights(&load_checkpoint(dir)?.0)
}
