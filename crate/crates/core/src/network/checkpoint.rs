//! Binary checkpoint: `b"GRCK"`, `u32` version, `u64` header length, a JSON
//! header, then little-endian `f64` payload. Header offsets count payload
//! elements, so a reader can seek to any tensor without parsing the rest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::config::{ModelConfig, TrainConfig};
use super::model::Model;
use super::optim::Sgd;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    /// Epochs completed when the checkpoint was taken.
    pub epoch: usize,
    pub val_accuracy: Option<f64>,
    pub params: Vec<(String, Tensor<f64>)>,
    /// Optimizer velocity in parameter order; empty when not saved.
    pub velocity: Vec<Tensor<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    epoch: usize,
    val_accuracy: Option<f64>,
    params: Vec<Entry>,
    velocity: Vec<Entry>,
}

impl Checkpoint {
    pub fn capture<S: Scalar>(
        model: &Model<S>,
        train: Option<&TrainConfig>,
        opt: Option<&Sgd<S>>,
        epoch: usize,
        val_accuracy: Option<f64>,
    ) -> Self {
        Self {
            model: model.config.clone(),
            train: train.cloned(),
            epoch,
            val_accuracy,
            params: model.store.iter().map(|(n, t)| (n.to_string(), t.cast())).collect(),
            velocity: opt.map(|o| o.velocity().iter().map(Tensor::cast).collect()).unwrap_or_default(),
        }
    }

    /// Rebuilds the model and overwrites every parameter by name.
    pub fn restore<S: Scalar>(&self) -> Result<Model<S>> {
        let mut model = Model::new(self.model.clone())?;
        if self.params.len() != model.store.len() {
            return Err(Error::config(format!(
                "checkpoint holds {} tensors, the configured model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for (name, t) in &self.params {
            let id = model
                .store
                .id(name)
                .ok_or_else(|| Error::config(format!("checkpoint tensor {name} is not a model parameter")))?;
            model.store.assign(id, t.cast())?;
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload: Vec<f64> = Vec::new();
        let mut entries = |list: &mut dyn Iterator<Item = (String, &Tensor<f64>)>| -> Vec<Entry> {
            list.map(|(name, t)| {
                let offset = payload.len();
                payload.extend_from_slice(t.data());
                Entry {
                    name,
                    shape: t.shape().to_vec(),
                    offset,
                }
            })
            .collect()
        };
        let params = entries(&mut self.params.iter().map(|(n, t)| (n.clone(), t)));
        let velocity = entries(&mut self.params.iter().zip(&self.velocity).map(|((n, _), v)| (n.clone(), v)));
        let header = serde_json::to_vec(&Header {
            model: self.model.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            val_accuracy: self.val_accuracy,
            params,
            velocity,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * payload.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < 16 {
            return Err(Error::Truncated {
                expected: 16,
                actual: b.len() as u64,
            });
        }
        if b[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "not a checkpoint (bad magic)".into(),
            });
        }
        let version = u32::from_le_bytes(b[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Parse {
                offset: 4,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let hlen = u64::from_le_bytes(b[8..16].try_into().expect("8 bytes"));
        let hend = 16u64.saturating_add(hlen);
        if (b.len() as u64) < hend {
            return Err(Error::Truncated {
                expected: hend,
                actual: b.len() as u64,
            });
        }
        let hend = hend as usize;
        let header: Header = serde_json::from_slice(&b[16..hend]).map_err(|e| Error::Parse {
            offset: 16 + e.column() as u64,
            message: format!("checkpoint header: {e}"),
        })?;
        let payload = &b[hend..];
        let read = |e: &Entry| -> Result<Tensor<f64>> {
            let n: usize = e.shape.iter().product();
            let start = e.offset * 8;
            let end = start + n * 8;
            if end > payload.len() {
                return Err(Error::Truncated {
                    expected: (hend + end) as u64,
                    actual: b.len() as u64,
                });
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Tensor::new(e.shape.clone(), data)
        };
        let params = header
            .params
            .iter()
            .map(|e| Ok((e.name.clone(), read(e)?)))
            .collect::<Result<Vec<_>>>()?;
        let velocity = header.velocity.iter().map(read).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: header.model,
            train: header.train,
            epoch: header.epoch,
            val_accuracy: header.val_accuracy,
            params,
            velocity,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let b = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&b)
    }
}
