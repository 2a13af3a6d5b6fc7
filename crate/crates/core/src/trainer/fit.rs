use std::time::Instant;

use log::warn;

use super::{adam_step, clip_gradients, lr_at, Checkpoint, OptimizerState, TrainConfig};
use crate::ctc::{ctc_loss_on, greedy_decode, GlossSequence, GlossVocabulary, LogProbMatrix};
use crate::dataio::{frame_drop, pad_batch, DropMode, RawSample};
use crate::error::{Error, Result};
use crate::metrics::{edit_ops, wer_from_counts, EditCounts};
use crate::model::{IigaModel, ModelConfig};
use crate::numcore::rng::purpose;
use crate::numcore::{Matrix, ParamSet, RngStream, Tape};

/// Anything that maps raw frames to frame-level log-probabilities.
pub trait Recognizer {
    fn log_probs(&self, frames: &Matrix<f64>) -> Result<LogProbMatrix<f64>>;
}

pub struct ModelRecognizer<'a> {
    pub model: &'a IigaModel,
    pub params: &'a ParamSet<f64>,
}

impl Recognizer for ModelRecognizer<'_> {
    fn log_probs(&self, frames: &Matrix<f64>) -> Result<LogProbMatrix<f64>> {
        self.model.log_probs(self.params, frames, frames.rows())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub wer: f64,
    pub edits: EditCounts,
    pub decodes: Vec<(String, GlossSequence)>,
}

/// Test-mode frame dropping, best-path decoding, corpus WER.
pub fn evaluate(recognizer: &impl Recognizer, dataset: &[RawSample], drop_ratio: f64) -> Result<EvalResult> {
    if dataset.is_empty() {
        return Err(Error::EmptySequence);
    }
    // Test-mode selection is deterministic and never touches the stream.
    let mut unused = RngStream::new(0);
    let mut edits = EditCounts::default();
    let mut ref_len = 0;
    let mut decodes = Vec::with_capacity(dataset.len());
    for sample in dataset {
        let kept = frame_drop(sample, drop_ratio, &mut unused, DropMode::Test)?;
        let lp = recognizer.log_probs(&kept.frames)?;
        let hyp = greedy_decode(&lp);
        edits = edits + edit_ops(sample.glosses.labels(), hyp.labels());
        ref_len += sample.glosses.len();
        decodes.push((sample.id.clone(), hyp));
    }
    Ok(EvalResult {
        wer: wer_from_counts(edits, ref_len)?,
        edits,
        decodes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    /// Mean CTC loss over the samples used.
    pub mean_loss: f64,
    pub used: usize,
    pub skipped: usize,
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub dev_wer: f64,
    pub wall_seconds: f64,
}

impl EpochLog {
    /// `epoch \t mean loss \t lr \t dev WER`. Wall time is left out so the
    /// line depends only on seed, config and data.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:e}\t{:.4}",
            self.epoch, self.mean_loss, self.lr, self.dev_wer
        )
    }
}

/// Model, parameters, optimizer and the per-purpose random streams.
pub struct Trainer {
    pub model: IigaModel,
    pub params: ParamSet<f64>,
    pub opt: OptimizerState<f64>,
    pub cfg: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub best_dev_wer: Option<f64>,
    shuffle_rng: RngStream,
    dropout_rng: RngStream,
    drop_rng: RngStream,
}

impl Trainer {
    pub fn new(mut model_cfg: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        model_cfg.encoder.dropout = cfg.dropout;
        let mut params = ParamSet::new();
        let model = IigaModel::build(model_cfg, &mut params, cfg.seed)?;
        let opt = OptimizerState::new(&params);
        Ok(Self::assemble(model, params, opt, cfg, 0, None))
    }

    fn assemble(
        model: IigaModel,
        params: ParamSet<f64>,
        opt: OptimizerState<f64>,
        cfg: TrainConfig,
        epoch: usize,
        best_dev_wer: Option<f64>,
    ) -> Self {
        let seed = cfg.seed;
        Trainer {
            model,
            params,
            opt,
            cfg,
            epoch,
            best_dev_wer,
            shuffle_rng: RngStream::for_purpose(seed, purpose::SHUFFLE),
            dropout_rng: RngStream::for_purpose(seed, purpose::DROPOUT),
            drop_rng: RngStream::for_purpose(seed, purpose::FRAME_DROP),
        }
    }

    /// Rebuilds a trainer from a checkpoint. Random streams restart from the seed.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let (model, params, opt) = ckpt.restore()?;
        Ok(Self::assemble(
            model,
            params,
            opt,
            ckpt.train_config.clone(),
            ckpt.epoch,
            ckpt.best_dev_wer,
        ))
    }

    pub fn recognizer(&self) -> ModelRecognizer<'_> {
        ModelRecognizer {
            model: &self.model,
            params: &self.params,
        }
    }

    /// Shuffle, then per batch: train-mode frame drop, pad, forward, mean
    /// CTC loss, backward, clip, Adam. Samples that become infeasible
    /// after dropping are skipped with a warning.
    pub fn train_epoch(&mut self, dataset: &[RawSample]) -> Result<EpochSummary> {
        if dataset.is_empty() {
            return Err(Error::EmptyEpoch);
        }
        let lr = lr_at(self.epoch, &self.cfg);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        self.shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut used = 0;
        let mut skipped = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let mut kept = Vec::with_capacity(chunk.len());
            for &i in chunk {
                match frame_drop(&dataset[i], self.cfg.drop_ratio, &mut self.drop_rng, DropMode::Train) {
                    Ok(s) => kept.push(s),
                    Err(e @ Error::InfeasibleAfterDrop { .. }) => {
                        warn!("skipping sample: {e}");
                        skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if kept.is_empty() {
                continue;
            }
            let batch = pad_batch(&kept)?;
            self.params.zero_grads();
            let mut tape = Tape::new();
            let mut losses = Vec::with_capacity(kept.len());
            for (b, sample) in kept.iter().enumerate() {
                let x = tape.input(batch.sequence(b));
                let lp = self.model.log_probs_on(
                    &mut tape,
                    &self.params,
                    x,
                    batch.lengths[b],
                    &mut self.dropout_rng,
                    true,
                )?;
                losses.push(ctc_loss_on(&mut tape, lp, &sample.glosses)?);
            }
            let n = losses.len();
            let total = tape.sum_scalars(losses, 1.0 / n as f64);
            let batch_loss = tape.value(total).get(0, 0);
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite("batch loss".into()));
            }
            loss_sum += batch_loss * n as f64;
            used += n;
            tape.backward(total, &mut self.params)?;
            clip_gradients(&mut self.params, self.cfg.clip_threshold);
            adam_step(&mut self.params, &mut self.opt, lr, self.cfg.weight_decay)?;
        }
        if used == 0 {
            return Err(Error::EmptyEpoch);
        }
        self.epoch += 1;
        Ok(EpochSummary {
            mean_loss: loss_sum / used as f64,
            used,
            skipped,
        })
    }

    pub fn evaluate(&self, dataset: &[RawSample]) -> Result<EvalResult> {
        evaluate(&self.recognizer(), dataset, self.cfg.drop_ratio)
    }

    pub fn checkpoint(&self, vocab: &GlossVocabulary) -> Checkpoint {
        Checkpoint::capture(self, vocab)
    }

    /// Trains up to `cfg.epochs`, evaluating on `dev` after each epoch.
    /// Returns the checkpoint with the lowest dev WER (earliest on ties).
    pub fn fit(
        &mut self,
        train: &[RawSample],
        dev: &[RawSample],
        vocab: &GlossVocabulary,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Checkpoint> {
        let mut best: Option<Checkpoint> = None;
        while self.epoch < self.cfg.epochs {
            let started = Instant::now();
            let lr = lr_at(self.epoch, &self.cfg);
            let summary = self.train_epoch(train)?;
            let dev_wer = self.evaluate(dev)?.wer;
            let log = EpochLog {
                epoch: self.epoch,
                mean_loss: summary.mean_loss,
                lr,
                dev_wer,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            on_epoch(&log);
            if self.best_dev_wer.is_none_or(|b| dev_wer < b) {
                self.best_dev_wer = Some(dev_wer);
                best = Some(self.checkpoint(vocab));
            }
        }
        Ok(best.unwrap_or_else(|| self.checkpoint(vocab)))
    }
}
