use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OptimizerState, TrainConfig, Trainer};
use crate::ctc::GlossVocabulary;
use crate::error::{Error, Result};
use crate::model::{IigaModel, ModelConfig};
use crate::numcore::{Matrix, ParamSet};

pub const CHECKPOINT_FORMAT: &str = "iiga-ckpt-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl NamedTensor {
    fn new(name: &str, m: &Matrix<f64>) -> Self {
        NamedTensor {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
            values: m.as_slice().to_vec(),
        }
    }

    fn to_matrix(&self) -> Result<Matrix<f64>> {
        Matrix::from_vec(self.rows, self.cols, self.values.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

/// Everything needed to resume training or run inference. Stored as JSON;
/// floats round-trip bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Epochs completed when captured.
    pub epoch: usize,
    pub best_dev_wer: Option<f64>,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub vocabulary: Vec<String>,
    pub params: Vec<NamedTensor>,
    pub optimizer: OptimizerSnapshot,
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer, vocab: &GlossVocabulary) -> Self {
        let names: Vec<&str> = trainer.params.iter().map(|p| p.name.as_str()).collect();
        let snap = |ms: &[Matrix<f64>]| names.iter().zip(ms).map(|(n, m)| NamedTensor::new(n, m)).collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            epoch: trainer.epoch,
            best_dev_wer: trainer.best_dev_wer,
            model_config: trainer.model.config.clone(),
            train_config: trainer.cfg.clone(),
            vocabulary: vocab.glosses().to_vec(),
            params: trainer
                .params
                .iter()
                .map(|p| NamedTensor::new(&p.name, &p.value))
                .collect(),
            optimizer: OptimizerSnapshot {
                step: trainer.opt.step,
                m: snap(&trainer.opt.m),
                v: snap(&trainer.opt.v),
            },
        }
    }

    pub fn vocabulary(&self) -> Result<GlossVocabulary> {
        GlossVocabulary::new(self.vocabulary.clone())
    }

    /// Rebuilds the model and loads every stored tensor by name. Missing,
    /// extra or mis-shaped tensors are errors.
    pub fn restore(&self) -> Result<(IigaModel, ParamSet<f64>, OptimizerState<f64>)> {
        let mut params = ParamSet::new();
        let model = IigaModel::build(self.model_config.clone(), &mut params, 0)?;
        if self.params.len() != params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                params.len()
            )));
        }
        let mut opt = OptimizerState::new(&params);
        opt.step = self.optimizer.step;
        for (slot, t) in self.params.iter().enumerate() {
            let id = params
                .id(&t.name)
                .ok_or_else(|| Error::Config(format!("unknown tensor `{}` in checkpoint", t.name)))?;
            params.set_value(id, t.to_matrix()?)?;
            for (dst, src) in [(&mut opt.m, &self.optimizer.m), (&mut opt.v, &self.optimizer.v)] {
                let s = src
                    .get(slot)
                    .filter(|s| s.name == t.name)
                    .ok_or_else(|| Error::Config(format!("optimizer state missing for `{}`", t.name)))?;
                let m = s.to_matrix()?;
                m.ensure_shape("optimizer state", params.value(id).rows(), params.value(id).cols())?;
                dst[id.index()] = m;
            }
        }
        Ok((model, params, opt))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "unsupported checkpoint format `{}`",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }
}
