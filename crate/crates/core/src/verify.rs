//! Self-check suites: finite-difference gradient checks for every
//! differentiable op and the full model, and the CTC brute-force
//! cross-check.

use serde::Serialize;

use crate::attention::{
    chunk_pool_on, encode_on, inter_broadcast_on, intra_sublayer_on, key_padding_mask, make_chunks,
    multi_head_attention_on, AttentionMode, AttentionParams, BlockParams, IigaConfig,
};
use crate::ctc::{ctc_brute_force, ctc_loss, ctc_loss_on, GlossSequence, LogProbMatrix};
use crate::error::{Error, Result};
use crate::model::{IigaModel, ModelConfig};
use crate::numcore::rng::purpose;
use crate::numcore::{grad_check, Matrix, Objective, ParamId, ParamSet, RngStream, Tape, Var};
use crate::trainer::xavier_init;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_EPS: f64 = 1e-5;
pub const ORACLE_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
    pub passed: bool,
}

/// Scalar objective `Σ out ⊙ R` for a fixed random weighting `R`, where
/// `out` is whatever `build` records. `build` may already end in a scalar
/// loss, in which case `R` is the 1×1 identity.
struct TapeObjective<F> {
    build: F,
    weights: Option<Matrix<f64>>,
    seed: u64,
}

impl<F> TapeObjective<F>
where
    F: FnMut(&mut Tape<f64>, &ParamSet<f64>) -> Result<Var>,
{
    fn new(build: F, seed: u64) -> Self {
        TapeObjective {
            build,
            weights: None,
            seed,
        }
    }

    fn record(&mut self, params: &ParamSet<f64>) -> Result<(Tape<f64>, Var)> {
        let mut tape = Tape::new();
        let out = (self.build)(&mut tape, params)?;
        let (r, c) = tape.shape(out);
        let weights = self.weights.get_or_insert_with(|| {
            if (r, c) == (1, 1) {
                Matrix::scalar(1.0)
            } else {
                let mut rng = RngStream::for_purpose(self.seed, purpose::ORACLE);
                Matrix::from_fn(r, c, |_, _| rng.normal())
            }
        });
        let value = tape.value(out).hadamard(weights)?.sum();
        let root = tape.loss(out, value, weights.clone())?;
        Ok((tape, root))
    }
}

impl<F> Objective<f64> for TapeObjective<F>
where
    F: FnMut(&mut Tape<f64>, &ParamSet<f64>) -> Result<Var>,
{
    fn value(&mut self, params: &ParamSet<f64>) -> Result<f64> {
        let (tape, root) = self.record(params)?;
        Ok(tape.value(root).get(0, 0))
    }

    fn gradient(&mut self, params: &mut ParamSet<f64>) -> Result<()> {
        let (tape, root) = self.record(params)?;
        tape.backward(root, params)
    }
}

fn check<F>(name: &str, params: &mut ParamSet<f64>, build: F, seed: u64) -> Result<SuiteResult>
where
    F: FnMut(&mut Tape<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let mut obj = TapeObjective::new(build, seed);
    let report = grad_check(&mut obj, params, GRAD_EPS)?;
    Ok(SuiteResult {
        name: name.to_string(),
        max_rel_error: report.max_rel_error,
        entries: report.entries,
        passed: report.max_rel_error <= GRAD_TOLERANCE,
    })
}

/// Moves every parameter to a generic point so zero-initialized tables and
/// unit gains are exercised too.
fn randomize(params: &mut ParamSet<f64>, rng: &mut RngStream, scale: f64) {
    for p in params.iter_mut() {
        p.value
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v += scale * rng.normal());
    }
}

fn random_param(params: &mut ParamSet<f64>, name: &str, r: usize, c: usize, rng: &mut RngStream) -> Result<ParamId> {
    params.add(name, Matrix::from_fn(r, c, |_, _| rng.normal()))
}

fn attention_fixture(
    d: usize,
    heads: usize,
    rel_clip: usize,
    rng: &mut RngStream,
) -> Result<(ParamSet<f64>, AttentionParams)> {
    let mut params = ParamSet::new();
    let ap = AttentionParams::register(&mut params, "attn", d, heads, rel_clip, &mut |r, c| {
        xavier_init(r, c, rng)
    })?;
    randomize(&mut params, rng, 0.3);
    Ok((params, ap))
}

/// Every op-level suite plus the full-stack check
/// (T = 20, D = 8, h = 2, N = 1, V = 4).
pub fn gradcheck_suites(seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = RngStream::for_purpose(seed, purpose::ORACLE);
    let mut out = Vec::new();

    // Elementwise and dense ops.
    {
        let mut ps = ParamSet::new();
        let x = random_param(&mut ps, "x", 5, 4, &mut rng)?;
        let w = random_param(&mut ps, "w", 4, 3, &mut rng)?;
        let b = random_param(&mut ps, "b", 1, 3, &mut rng)?;
        let w2 = random_param(&mut ps, "w2", 6, 4, &mut rng)?;
        out.push(check(
            "linear",
            &mut ps.clone(),
            |t, p| {
                let (xv, wv, bv) = (t.param(p, x), t.param(p, w), t.param(p, b));
                t.linear(xv, wv, Some(bv))
            },
            seed,
        )?);
        out.push(check(
            "matmul_nt",
            &mut ps.clone(),
            |t, p| {
                let (xv, wv) = (t.param(p, x), t.param(p, w2));
                t.matmul_nt(xv, wv)
            },
            seed,
        )?);
        out.push(check(
            "add_scale_relu",
            &mut ps.clone(),
            |t, p| {
                let xv = t.param(p, x);
                let s = t.scale(xv, 0.7);
                let sum = t.add(xv, s)?;
                Ok(t.relu(sum))
            },
            seed,
        )?);
        let mask = Matrix::from_fn(5, 4, |r, c| c <= r || c == 3);
        out.push(check(
            "softmax_rows",
            &mut ps.clone(),
            |t, p| {
                let xv = t.param(p, x);
                t.softmax_rows(xv, Some(&mask))
            },
            seed,
        )?);
        out.push(check(
            "log_softmax_rows",
            &mut ps.clone(),
            |t, p| {
                let xv = t.param(p, x);
                Ok(t.log_softmax_rows(xv))
            },
            seed,
        )?);
        let gamma = random_param(&mut ps, "gamma", 1, 4, &mut rng)?;
        let beta = random_param(&mut ps, "beta", 1, 4, &mut rng)?;
        out.push(check(
            "layer_norm",
            &mut ps.clone(),
            |t, p| {
                let (xv, g, bt) = (t.param(p, x), t.param(p, gamma), t.param(p, beta));
                t.layer_norm(xv, g, bt, 1e-5)
            },
            seed,
        )?);
        out.push(check(
            "dropout",
            &mut ps.clone(),
            |t, p| {
                let xv = t.param(p, x);
                // Same seed every evaluation, so the mask is fixed.
                let mut r = RngStream::for_purpose(seed, purpose::DROPOUT);
                t.dropout(xv, 0.3, &mut r, true)
            },
            seed,
        )?);
        let table = random_param(&mut ps, "table", 2, 5, &mut rng)?;
        out.push(check(
            "rel_bias",
            &mut ps.clone(),
            |t, p| {
                let s = t.param(p, w2);
                let tb = t.param(p, table);
                let sq = t.slice(s, 0, 4, 0, 4);
                t.rel_bias(sq, tb, 1, 2)
            },
            seed,
        )?);
    }

    // Attention layers.
    {
        let (d, h, rows) = (8, 2, 11);
        let (mut ps, ap) = attention_fixture(d, h, 3, &mut rng)?;
        let x = random_param(&mut ps, "x", rows, d, &mut rng)?;
        let mask = key_padding_mask(rows, 8);
        out.push(check(
            "multi_head_attention",
            &mut ps.clone(),
            |t, p| {
                let xv = t.param(p, x);
                multi_head_attention_on(t, p, &ap, h, xv, Some(&mask))
            },
            seed,
        )?);
        let plan = make_chunks(9, 4, 3)?;
        out.push(check(
            "intra_gloss_attention",
            &mut ps.clone(),
            |t, p| {
                let xv = t.param(p, x);
                intra_sublayer_on(t, p, &ap, h, xv, &plan)
            },
            seed,
        )?);
        out.push(check(
            "chunk_pool",
            &mut ps.clone(),
            |t, p| {
                let xv = t.param(p, x);
                chunk_pool_on(t, xv, &plan)
            },
            seed,
        )?);
        out.push(check(
            "inter_gloss_attention",
            &mut ps.clone(),
            |t, p| {
                let xv = t.param(p, x);
                inter_broadcast_on(t, p, &ap, h, xv, &plan)
            },
            seed,
        )?);
    }

    // One encoder block per mode, with padding and dropout.
    for mode in [AttentionMode::Vanilla, AttentionMode::Intra, AttentionMode::IntraInter] {
        let cfg = IigaConfig {
            n_blocks: 1,
            heads: 2,
            d_model: 8,
            d_ff: 12,
            chunk_size: 4,
            stride: 4,
            dropout: 0.1,
            rel_clip: 3,
            mode,
        };
        let mut ps = ParamSet::new();
        let bp = BlockParams::register(&mut ps, "block0", &cfg, &mut |r, c| xavier_init(r, c, &mut rng))?;
        randomize(&mut ps, &mut rng, 0.2);
        let x = random_param(&mut ps, "x", 10, 8, &mut rng)?;
        out.push(check(
            &format!("iiga_block[{mode}]"),
            &mut ps,
            |t, p| {
                let xv = t.param(p, x);
                let mut r = RngStream::for_purpose(seed, purpose::DROPOUT);
                encode_on(t, p, &[bp], &cfg, xv, 9, &mut r, true)
            },
            seed,
        )?);
    }

    // CTC on log-softmaxed logits.
    {
        let mut ps = ParamSet::new();
        let logits = random_param(&mut ps, "logits", 6, 4, &mut rng)?;
        let y = GlossSequence::new(vec![1, 3, 3])?;
        out.push(check(
            "ctc_loss",
            &mut ps,
            |t, p| {
                let l = t.param(p, logits);
                let lp = t.log_softmax_rows(l);
                ctc_loss_on(t, lp, &y)
            },
            seed,
        )?);
    }

    out.push(full_stack(seed, &mut rng)?);
    Ok(out)
}

fn full_stack(seed: u64, rng: &mut RngStream) -> Result<SuiteResult> {
    let (t_len, vocab) = (20, 4);
    let cfg = ModelConfig {
        input_width: 6,
        num_classes: vocab + 1,
        encoder: IigaConfig {
            n_blocks: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            ..IigaConfig::toy()
        },
    };
    let mut ps = ParamSet::new();
    let model = IigaModel::build(cfg, &mut ps, seed)?;
    randomize(&mut ps, rng, 0.1);
    let frames = Matrix::from_fn(t_len, 6, |_, _| rng.normal());
    let y = GlossSequence::new(vec![1, 2, 4, 2, 3])?;
    check(
        "encode+frame_log_probs+ctc_loss",
        &mut ps,
        |t, p| {
            let x = t.input(frames.clone());
            let mut r = RngStream::for_purpose(seed, purpose::DROPOUT);
            let lp = model.log_probs_on(t, p, x, t_len, &mut r, true)?;
            ctc_loss_on(t, lp, &y)
        },
        seed,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub instances: usize,
    pub max_abs_diff: f64,
    pub passed: bool,
}

/// Random instances with `T ≤ 6`, `V ≤ 3`, `|y| ≤ 3`, comparing
/// `exp(−ctc_loss)` with exhaustive path enumeration.
pub fn ctc_oracle_suite(instances: usize, seed: u64) -> Result<OracleReport> {
    if instances == 0 {
        return Err(Error::Config("oracle suite needs at least one instance".into()));
    }
    let mut rng = RngStream::for_purpose(seed, purpose::ORACLE);
    let mut max_abs_diff: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let t_len = rng.int_inclusive(1, 6);
        let v = rng.int_inclusive(1, 3);
        let len = rng.int_inclusive(0, 3);
        let y = GlossSequence::new((0..len).map(|_| rng.int_inclusive(1, v)).collect())?;
        if y.min_frames() > t_len {
            continue;
        }
        let scale = rng.uniform_in(0.5, 3.0);
        let logits = Matrix::from_fn(t_len, v + 1, |_, _| scale * rng.normal());
        let lp = LogProbMatrix::from_logits(&logits);
        let brute: f64 = ctc_brute_force(&lp, &y)?;
        let fast = (-ctc_loss(&lp, &y)?).exp();
        max_abs_diff = max_abs_diff.max((fast - brute).abs());
        done += 1;
    }
    Ok(OracleReport {
        instances,
        max_abs_diff,
        passed: max_abs_diff <= ORACLE_TOLERANCE,
    })
}
