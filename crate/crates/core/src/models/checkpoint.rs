use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelParams, NamedTensor};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::indicators::feature_fingerprint;

pub const CHECKPOINT_FORMAT: &str = "optbt-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Self-describing JSON document for trained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    pub architecture: Architecture,
    pub hidden_size: usize,
    pub dropout: f64,
    pub feature_fingerprint: String,
    /// Free-form hyperparameter record (training configuration, seed).
    pub hyperparameters: serde_json::Value,
    tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, hyperparameters: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            architecture: params.architecture,
            hidden_size: params.hidden,
            dropout: params.dropout,
            feature_fingerprint: feature_fingerprint(),
            hyperparameters,
            tensors: params
                .tensors
                .iter()
                .map(|t| StoredTensor {
                    name: t.name.clone(),
                    rows: t.value.rows,
                    cols: t.value.cols,
                    data: t.value.data.clone(),
                })
                .collect(),
        }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Parses and validates format tag, feature fingerprint and tensor shapes.
    pub fn read<R: Read>(r: R) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(r)?;
        ckpt.params()?;
        Ok(ckpt)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }

    pub fn params(&self) -> Result<ModelParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", self.format)));
        }
        if self.feature_fingerprint != feature_fingerprint() {
            return Err(Error::Checkpoint(
                "feature fingerprint differs from this build's feature order".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Checkpoint(format!("dropout {} out of range", self.dropout)));
        }
        if self.hidden_size == 0 || self.hidden_size > 4096 {
            return Err(Error::Checkpoint(format!("hidden size {} out of range", self.hidden_size)));
        }
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            if t.rows.checked_mul(t.cols) != Some(t.data.len()) {
                return Err(Error::Checkpoint(format!("tensor `{}` has inconsistent size", t.name)));
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Checkpoint(format!("tensor `{}` has non-finite values", t.name)));
            }
            tensors.push(NamedTensor {
                name: t.name.clone(),
                value: Tensor::new(t.rows, t.cols, t.data.clone()),
            });
        }
        let grads = tensors.iter().map(|t| Tensor::zeros(t.value.rows, t.value.cols)).collect();
        let params = ModelParams {
            architecture: self.architecture,
            hidden: self.hidden_size,
            dropout: self.dropout,
            tensors,
            grads,
        };
        params
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_and_validation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(Architecture::Lstm, 4, 0.2, &mut rng);
        let ckpt = Checkpoint::new(&p, serde_json::json!({"seed": 1}));
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        let back = Checkpoint::read(buf.as_slice()).unwrap();
        assert_eq!(back.params().unwrap().tensors, p.tensors);

        let text = String::from_utf8(buf).unwrap();
        let tampered = text.replace("v1:nret_1", "v0:nret_1");
        assert!(matches!(Checkpoint::from_json(&tampered), Err(Error::Checkpoint(_))));
        let wrong_arch = text.replace("\"lstm\"", "\"mlp\"");
        assert!(Checkpoint::from_json(&wrong_arch).is_err());
    }
}
