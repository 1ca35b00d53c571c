//! Self-describing JSON checkpoints: model config plus every tensor by name.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{DualEncoder, ModelConfig};
use crate::error::{Error, Result};
use crate::util;

pub const CHECKPOINT_FORMAT: &str = "nast-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl DualEncoder {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self
            .params
            .iter()
            .map(|(spec, data)| {
                (
                    spec.name.clone(),
                    TensorRecord {
                        shape: spec.shape.clone(),
                        data: data.to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config().clone(),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("unsupported checkpoint format {:?}", ckpt.format)));
        }
        let mut model = DualEncoder::new(ckpt.config)?;
        for spec in model.params.specs() {
            if let Some(rec) = ckpt.tensors.get(&spec.name) {
                if rec.shape != spec.shape {
                    return Err(Error::Shape(format!(
                        "tensor {}: checkpoint shape {:?}, model shape {:?}",
                        spec.name, rec.shape, spec.shape
                    )));
                }
            }
        }
        let data = ckpt.tensors.into_iter().map(|(k, v)| (k, v.data)).collect();
        model.params.load_from(data)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(util::read_json(path)?)
    }
}
