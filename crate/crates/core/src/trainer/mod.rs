//! Optimization: Xavier initialization, Adam with L2 weight decay, a
//! milestone learning-rate schedule, global-norm gradient clipping, the
//! epoch loop with per-epoch dev evaluation, and checkpoints.

mod checkpoint;
mod fit;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use fit::{evaluate, EpochLog, EpochSummary, EvalResult, ModelRecognizer, Recognizer, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamSet, RngStream, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    pub clip_threshold: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Dropout on every sublayer output; overrides the encoder config.
    pub dropout: f64,
    pub drop_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-5,
            milestones: vec![15],
            lr_factor: 0.1,
            clip_threshold: 1.0,
            batch_size: 2,
            epochs: 30,
            dropout: 0.1,
            drop_ratio: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..).contains(&self.lr) || !(0.0..).contains(&self.weight_decay) {
            return Err(Error::Config("lr and weight_decay must be non-negative".into()));
        }
        if self.clip_threshold.is_nan() || self.clip_threshold <= 0.0 {
            return Err(Error::Config("clip_threshold must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.drop_ratio) {
            return Err(Error::Config("dropout and drop_ratio must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Glorot-uniform matrix on `[−a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<S: Scalar>(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Matrix<S> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| S::of(rng.uniform_in(-a, a)))
}

/// `lr · lr_factor^(number of milestones ≤ epoch)`; epochs count from 0.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.milestones.iter().filter(|&&m| m <= epoch).count();
    cfg.lr * cfg.lr_factor.powi(passed as i32)
}

/// Scales every gradient by `threshold / norm` when the global L2 norm
/// exceeds `threshold`. Returns the norm before clipping.
pub fn clip_gradients<S: Scalar>(params: &mut ParamSet<S>, threshold: S) -> S {
    let norm = params.grad_norm();
    if norm > threshold {
        let scale = threshold / norm;
        for p in params.iter_mut() {
            p.grad.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<S> {
    pub m: Vec<Matrix<S>>,
    pub v: Vec<Matrix<S>>,
    pub step: u64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &ParamSet<S>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        OptimizerState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One Adam update (β1 = 0.9, β2 = 0.999, ε = 1e-8, bias-corrected) with
/// weight decay folded into the gradient as `g + wd·θ`.
///
/// Refuses the step, leaving parameters and state untouched, if any
/// gradient entry is non-finite.
pub fn adam_step<S: Scalar>(
    params: &mut ParamSet<S>,
    state: &mut OptimizerState<S>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Config(format!(
            "optimizer state has {} slots for {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::PoisonedStep(p.name.clone()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (S::of(ADAM_BETA1), S::of(ADAM_BETA2));
    let bc1 = S::one() - b1.powi(t);
    let bc2 = S::one() - b2.powi(t);
    let (lr, wd, eps) = (S::of(lr), S::of(weight_decay), S::of(ADAM_EPS));
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        let theta = p.value.as_mut_slice();
        for (k, &g0) in p.grad.as_slice().iter().enumerate() {
            let g = g0 + wd * theta[k];
            m[k] = b1 * m[k] + (S::one() - b1) * g;
            v[k] = b2 * v[k] + (S::one() - b2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            theta[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
