use super::gloss::{inter_broadcast_on, intra_sublayer_on};
use super::mha::{key_padding_mask, multi_head_attention_on};
use super::types::{make_chunks, AttentionMode, BlockParams, FeatureSequence, IigaConfig, NormParams, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamId, ParamSet, RngStream, Scalar, Tape, Var};

/// Learned linear frame embedding: `raw · embed + bias`, all rows valid.
pub fn embed_frames_on<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    raw: Var,
    embed: ParamId,
    bias: ParamId,
) -> Result<Var> {
    let w = tape.param(params, embed);
    let b = tape.param(params, bias);
    tape.linear(raw, w, Some(b))
}

pub fn embed_frames<S: Scalar>(
    raw: &Matrix<S>,
    params: &ParamSet<S>,
    embed: ParamId,
    bias: ParamId,
) -> Result<FeatureSequence<S>> {
    let mut tape = Tape::new();
    let x = tape.input(raw.clone());
    let out = embed_frames_on(&mut tape, params, x, embed, bias)?;
    Ok(FeatureSequence::full(tape.value(out).clone()))
}

fn norm_on<S: Scalar>(tape: &mut Tape<S>, params: &ParamSet<S>, n: &NormParams, x: Var) -> Result<Var> {
    let g = tape.param(params, n.gamma);
    let b = tape.param(params, n.beta);
    tape.layer_norm(x, g, b, S::of(LAYER_NORM_EPS))
}

/// One post-norm encoder layer:
///
/// ```text
/// x1 = LN(x  + drop(temporal_attention(x)))
/// x2 = LN(x1 + drop(inter_broadcast(x1)))      (intra+inter mode only)
/// x3 = LN(x2 + drop(ffn(x2)))
/// ```
#[allow(clippy::too_many_arguments)]
pub fn iiga_block_on<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    bp: &BlockParams,
    cfg: &IigaConfig,
    x: Var,
    valid_len: usize,
    rng: &mut RngStream,
    training: bool,
) -> Result<Var> {
    let rows = tape.shape(x).0;
    let plan = make_chunks(valid_len, cfg.chunk_size, cfg.stride)?;

    let temporal = match cfg.mode {
        AttentionMode::Vanilla => {
            let mask = (valid_len < rows).then(|| key_padding_mask(rows, valid_len));
            multi_head_attention_on(tape, params, &bp.intra, cfg.heads, x, mask.as_ref())?
        }
        AttentionMode::Intra | AttentionMode::IntraInter => {
            intra_sublayer_on(tape, params, &bp.intra, cfg.heads, x, &plan)?
        }
    };
    let temporal = tape.dropout(temporal, cfg.dropout, rng, training)?;
    let sum = tape.add(x, temporal)?;
    let mut h = norm_on(tape, params, &bp.norm1, sum)?;

    if cfg.mode == AttentionMode::IntraInter {
        let inter = bp
            .inter
            .as_ref()
            .ok_or_else(|| Error::Config("intra+inter mode needs inter-gloss parameters".into()))?;
        let b = inter_broadcast_on(tape, params, inter, cfg.heads, h, &plan)?;
        let b = tape.dropout(b, cfg.dropout, rng, training)?;
        let sum = tape.add(h, b)?;
        h = norm_on(tape, params, &bp.norm2, sum)?;
    }

    let w1 = tape.param(params, bp.ffn.w1);
    let b1 = tape.param(params, bp.ffn.b1);
    let w2 = tape.param(params, bp.ffn.w2);
    let b2 = tape.param(params, bp.ffn.b2);
    let hidden = tape.linear(h, w1, Some(b1))?;
    let hidden = tape.relu(hidden);
    let f = tape.linear(hidden, w2, Some(b2))?;
    let f = tape.dropout(f, cfg.dropout, rng, training)?;
    let sum = tape.add(h, f)?;
    norm_on(tape, params, &bp.norm3, sum)
}

#[allow(clippy::too_many_arguments)]
pub fn encode_on<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    blocks: &[BlockParams],
    cfg: &IigaConfig,
    x: Var,
    valid_len: usize,
    rng: &mut RngStream,
    training: bool,
) -> Result<Var> {
    if blocks.len() != cfg.n_blocks {
        return Err(Error::Config(format!(
            "{} blocks supplied for n_blocks = {}",
            blocks.len(),
            cfg.n_blocks
        )));
    }
    blocks.iter().try_fold(x, |h, bp| {
        iiga_block_on(tape, params, bp, cfg, h, valid_len, rng, training)
    })
}

pub fn iiga_block<S: Scalar>(
    seq: &FeatureSequence<S>,
    params: &ParamSet<S>,
    bp: &BlockParams,
    cfg: &IigaConfig,
    rng: &mut RngStream,
    training: bool,
) -> Result<FeatureSequence<S>> {
    let mut tape = Tape::new();
    let x = tape.input(seq.features.clone());
    let out = iiga_block_on(&mut tape, params, bp, cfg, x, seq.valid_len, rng, training)?;
    FeatureSequence::new(tape.value(out).clone(), seq.valid_len)
}

/// Runs the `cfg.n_blocks`-deep stack.
pub fn encode<S: Scalar>(
    seq: &FeatureSequence<S>,
    params: &ParamSet<S>,
    blocks: &[BlockParams],
    cfg: &IigaConfig,
    rng: &mut RngStream,
    training: bool,
) -> Result<FeatureSequence<S>> {
    let mut tape = Tape::new();
    let x = tape.input(seq.features.clone());
    let out = encode_on(&mut tape, params, blocks, cfg, x, seq.valid_len, rng, training)?;
    FeatureSequence::new(tape.value(out).clone(), seq.valid_len)
}
