//! JSON checkpoint: format version, model structure, the vocabulary and
//! standardizer the model was trained with, and every parameter as
//! `name`, `shape`, row-major `values`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dataset::Vocabulary;
use crate::features::{LogBase, Standardizer};

use super::{DeepOFormer, ModelDims, ModelError, TrainedModel, Variant};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub variant: Variant,
    pub dims: ModelDims,
    pub vocab_sizes: Vec<usize>,
    pub vocabulary: Vocabulary,
    pub standardizer: Standardizer,
    pub log_base: LogBase,
    pub params: Vec<NamedTensor>,
}

impl TrainedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            variant: self.model.variant,
            dims: self.model.dims.clone(),
            vocab_sizes: self.model.vocab_sizes.clone(),
            vocabulary: self.vocabulary.clone(),
            standardizer: self.standardizer.clone(),
            log_base: self.log_base,
            params: self
                .model
                .params
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, ModelError> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        let mut model = DeepOFormer::build(ckpt.variant, &ckpt.dims, &ckpt.vocab_sizes, 0)?;
        if ckpt.params.len() != model.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} parameter tensors in file, model has {}",
                ckpt.params.len(),
                model.params.len()
            )));
        }
        for entry in ckpt.params {
            let id = model
                .params
                .find(&entry.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unexpected parameter `{}`", entry.name)))?;
            let slot = model.params.get_mut(id);
            if slot.shape() != entry.shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, model expects {:?}",
                    entry.name,
                    entry.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(entry.shape, entry.values)?;
        }
        Ok(Self {
            model,
            vocabulary: ckpt.vocabulary,
            standardizer: ckpt.standardizer,
            log_base: ckpt.log_base,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}
