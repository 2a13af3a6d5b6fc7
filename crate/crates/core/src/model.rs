//! The full recognizer: linear frame embedding, IIGA encoder stack and
//! frame-level gloss classifier.

use serde::{Deserialize, Serialize};

use crate::attention::{embed_frames_on, encode_on, BlockParams, IigaConfig};
use crate::ctc::{frame_log_probs_on, LogProbMatrix};
use crate::error::{Error, Result};
use crate::numcore::rng::purpose;
use crate::numcore::{Matrix, ParamId, ParamSet, RngStream, Scalar, Tape, Var};
use crate::trainer::xavier_init;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Raw per-frame feature width.
    pub input_width: usize,
    /// Glosses plus the blank.
    pub num_classes: usize,
    pub encoder: IigaConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.num_classes < 2 {
            return Err(Error::Config(format!(
                "input width {} / {} classes",
                self.input_width, self.num_classes
            )));
        }
        self.encoder.validate()
    }
}

#[derive(Clone, Debug)]
pub struct IigaModel {
    pub config: ModelConfig,
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub blocks: Vec<BlockParams>,
    pub classifier_w: ParamId,
    pub classifier_b: ParamId,
}

impl IigaModel {
    /// Registers all parameters: Xavier-uniform weight matrices, zero
    /// biases and relative-bias tables, unit norm gains.
    pub fn build<S: Scalar>(config: ModelConfig, params: &mut ParamSet<S>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::for_purpose(seed, purpose::INIT);
        let mut init = |rows: usize, cols: usize| xavier_init(rows, cols, &mut rng);
        let d = config.encoder.d_model;
        let embed_w = params.add("embed.w", init(config.input_width, d))?;
        let embed_b = params.add("embed.b", Matrix::zeros(1, d))?;
        let blocks = (0..config.encoder.n_blocks)
            .map(|i| BlockParams::register(params, &format!("block{i}"), &config.encoder, &mut init))
            .collect::<Result<Vec<_>>>()?;
        let classifier_w = params.add("classifier.w", init(d, config.num_classes))?;
        let classifier_b = params.add("classifier.b", Matrix::zeros(1, config.num_classes))?;
        Ok(IigaModel {
            config,
            embed_w,
            embed_b,
            blocks,
            classifier_w,
            classifier_b,
        })
    }

    /// Log-probabilities of the first `valid_len` frames of `frames`.
    pub fn log_probs_on<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        frames: Var,
        valid_len: usize,
        rng: &mut RngStream,
        training: bool,
    ) -> Result<Var> {
        let x = embed_frames_on(tape, params, frames, self.embed_w, self.embed_b)?;
        let h = encode_on(
            tape,
            params,
            &self.blocks,
            &self.config.encoder,
            x,
            valid_len,
            rng,
            training,
        )?;
        frame_log_probs_on(tape, params, h, valid_len, self.classifier_w, self.classifier_b)
    }

    /// Inference pass (no dropout).
    pub fn log_probs<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        frames: &Matrix<S>,
        valid_len: usize,
    ) -> Result<LogProbMatrix<S>> {
        let mut tape = Tape::new();
        let x = tape.input(frames.clone());
        // Inference draws nothing from the stream.
        let mut rng = RngStream::new(0);
        let out = self.log_probs_on(&mut tape, params, x, valid_len, &mut rng, false)?;
        Ok(LogProbMatrix::new(tape.value(out).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic_and_names_are_stable() {
        let cfg = ModelConfig {
            input_width: 5,
            num_classes: 4,
            encoder: IigaConfig::toy(),
        };
        let mut a: ParamSet<f64> = ParamSet::new();
        let mut b: ParamSet<f64> = ParamSet::new();
        IigaModel::build(cfg.clone(), &mut a, 9).unwrap();
        IigaModel::build(cfg, &mut b, 9).unwrap();
        for (pa, pb) in a.iter().zip(b.iter()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.value, pb.value);
        }
        assert!(a.id("block1.inter.w_q").is_some());
        assert!(a.id("block0.norm3.gamma").is_some());
    }
}
