//! Intra-gloss (chunk-local) and inter-gloss (chunk-level) attention.

use super::mha::{multi_head_attention_on, segmented_attention_on};
use super::types::{AttentionParams, ChunkPlan, FeatureSequence};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamSet, RowMap, Scalar, Tape, Var};

fn check_plan(plan: &ChunkPlan, rows: usize) -> Result<()> {
    if plan.is_empty() {
        return Err(Error::EmptySequence);
    }
    if plan.covered_len() > rows {
        return Err(Error::Config(format!(
            "chunk plan covers {} frames but the sequence has {rows} rows",
            plan.covered_len()
        )));
    }
    Ok(())
}

/// Attention within each chunk of `plan`; rows past the plan's coverage are zero.
pub fn intra_sublayer_on<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    ap: &AttentionParams,
    heads: usize,
    x: Var,
    plan: &ChunkPlan,
) -> Result<Var> {
    check_plan(plan, tape.shape(x).0)?;
    segmented_attention_on(tape, params, ap, heads, x, &plan.intervals, None)
}

/// Chunk means of `x`, one row per interval.
pub fn chunk_pool_on<S: Scalar>(tape: &mut Tape<S>, x: Var, plan: &ChunkPlan) -> Result<Var> {
    let terms = plan
        .intervals
        .iter()
        .map(|&(s, e)| {
            let w = S::one() / S::of_usize(e - s);
            (s..e).map(|r| (r, w)).collect()
        })
        .collect();
    tape.row_combine(x, RowMap { terms })
}

/// Chunk-level attention output replicated back over each chunk's frames
/// (averaged where chunks overlap, zero on padding rows). This is the
/// increment the inter-gloss residual adds.
pub fn inter_broadcast_on<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    ap: &AttentionParams,
    heads: usize,
    x: Var,
    plan: &ChunkPlan,
) -> Result<Var> {
    let rows = tape.shape(x).0;
    check_plan(plan, rows)?;
    let pooled = chunk_pool_on(tape, x, plan)?;
    let attended = multi_head_attention_on(tape, params, ap, heads, pooled, None)?;
    let coverage = plan.coverage();
    let mut terms: Vec<Vec<(usize, S)>> = vec![Vec::new(); rows];
    for (c, &(s, e)) in plan.intervals.iter().enumerate() {
        for r in s..e {
            terms[r].push((c, S::one() / S::of_usize(coverage[r])));
        }
    }
    tape.row_combine(attended, RowMap { terms })
}

/// Self-attention inside each chunk of `plan`, written back per frame.
/// Padding rows are returned unchanged.
pub fn intra_gloss_attention<S: Scalar>(
    seq: &FeatureSequence<S>,
    params: &ParamSet<S>,
    ap: &AttentionParams,
    plan: &ChunkPlan,
    heads: usize,
) -> Result<FeatureSequence<S>> {
    let mut tape = Tape::new();
    let x = tape.input(seq.features.clone());
    let out = intra_sublayer_on(&mut tape, params, ap, heads, x, plan)?;
    let mut features = tape.value(out).clone();
    copy_padding(&mut features, &seq.features, plan.covered_len());
    Ok(FeatureSequence {
        features,
        valid_len: seq.valid_len,
    })
}

/// Average-pools each chunk, runs multi-head attention across the pooled
/// rows, broadcasts each result back over its chunk and adds it to `seq`.
pub fn inter_gloss_attention<S: Scalar>(
    seq: &FeatureSequence<S>,
    params: &ParamSet<S>,
    ap: &AttentionParams,
    plan: &ChunkPlan,
    heads: usize,
) -> Result<FeatureSequence<S>> {
    let mut tape = Tape::new();
    let x = tape.input(seq.features.clone());
    let b = inter_broadcast_on(&mut tape, params, ap, heads, x, plan)?;
    let out = tape.add(x, b)?;
    Ok(FeatureSequence {
        features: tape.value(out).clone(),
        valid_len: seq.valid_len,
    })
}

fn copy_padding<S: Scalar>(dst: &mut Matrix<S>, src: &Matrix<S>, from: usize) {
    for r in from..src.rows() {
        dst.row_mut(r).copy_from_slice(src.row(r));
    }
}
