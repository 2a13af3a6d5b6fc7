//! Scaled dot-product and multi-head self-attention.

use super::types::AttentionParams;
use crate::error::{Error, Result};
use crate::numcore::{Mask, Matrix, ParamSet, Placement, Scalar, Tape, Var};

/// Relative-position bias source for one head.
#[derive(Clone, Copy, Debug)]
pub struct RelBiasRef {
    pub table: Var,
    pub head: usize,
    pub radius: usize,
}

/// `softmax(Q Kᵀ / √d + bias, mask) · V` on the tape.
pub fn scaled_dot_attention_on<S: Scalar>(
    tape: &mut Tape<S>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Mask>,
    rel: Option<RelBiasRef>,
) -> Result<Var> {
    let (lq, dh) = tape.shape(q);
    if tape.shape(k) != (lq, dh) || tape.shape(v).0 != lq {
        return Err(Error::Dimension {
            op: "scaled_dot_attention",
            left: tape.shape(q),
            right: tape.shape(k),
        });
    }
    let raw = tape.matmul_nt(q, k)?;
    let mut scores = tape.scale(raw, S::one() / S::of_usize(dh).sqrt());
    if let Some(r) = rel {
        scores = tape.rel_bias(scores, r.table, r.head, r.radius)?;
    }
    let weights = tape.softmax_rows(scores, mask)?;
    tape.matmul(weights, v)
}

/// Value-level form of [`scaled_dot_attention_on`]. `rel_bias` is one head's
/// bias row of length `2R + 1`.
pub fn scaled_dot_attention<S: Scalar>(
    q: &Matrix<S>,
    k: &Matrix<S>,
    v: &Matrix<S>,
    mask: Option<&Mask>,
    rel_bias: Option<&[S]>,
) -> Result<Matrix<S>> {
    let mut tape = Tape::new();
    let (q, k, v) = (tape.input(q.clone()), tape.input(k.clone()), tape.input(v.clone()));
    let rel = match rel_bias {
        Some(row) => {
            if row.len() % 2 == 0 {
                return Err(Error::Config("relative bias row must have odd length 2R+1".into()));
            }
            Some(RelBiasRef {
                table: tape.input(Matrix::row_vector(row)),
                head: 0,
                radius: row.len() / 2,
            })
        }
        None => None,
    };
    let out = scaled_dot_attention_on(&mut tape, q, k, v, mask, rel)?;
    Ok(tape.value(out).clone())
}

/// Multi-head attention restricted to row segments of `x`.
///
/// Projections are row-wise, so `x` is projected once and each segment
/// attends only within itself. A row covered by several segments receives
/// the mean of their outputs; rows outside every segment get zero before the
/// output projection. `mask` applies only when there is a single segment
/// spanning all rows.
pub(crate) fn segmented_attention_on<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    ap: &AttentionParams,
    heads: usize,
    x: Var,
    segments: &[(usize, usize)],
    mask: Option<&Mask>,
) -> Result<Var> {
    let (rows, d) = tape.shape(x);
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("d_model {d} is not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let wq = tape.param(params, ap.w_q);
    let wk = tape.param(params, ap.w_k);
    let wv = tape.param(params, ap.w_v);
    let wo = tape.param(params, ap.w_o);
    let table = tape.param(params, ap.rel_bias);
    if tape.shape(table).0 != heads {
        return Err(Error::Dimension {
            op: "rel_bias heads",
            left: tape.shape(table),
            right: (heads, 2 * ap.rel_clip + 1),
        });
    }
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;

    let mut coverage = vec![0usize; rows];
    for &(s, e) in segments {
        coverage[s..e].iter_mut().for_each(|c| *c += 1);
    }
    let overlapping = coverage.iter().any(|&c| c > 1);

    let mut parts = Vec::with_capacity(segments.len() * heads);
    for &(s, e) in segments {
        let weights = overlapping.then(|| (s..e).map(|r| S::one() / S::of_usize(coverage[r])).collect::<Vec<_>>());
        let whole = s == 0 && e == rows;
        for h in 0..heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let (qs, ks, vs) = if whole && heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice(q, s, e, c0, c1),
                    tape.slice(k, s, e, c0, c1),
                    tape.slice(v, s, e, c0, c1),
                )
            };
            let rel = RelBiasRef {
                table,
                head: h,
                radius: ap.rel_clip,
            };
            let seg_mask = if whole { mask } else { None };
            let out = scaled_dot_attention_on(tape, qs, ks, vs, seg_mask, Some(rel))?;
            parts.push(Placement {
                src: out,
                row: s,
                col: c0,
                row_weights: weights.clone(),
            });
        }
    }
    let concat = tape.scatter(rows, d, parts)?;
    tape.matmul(concat, wo)
}

/// Multi-head self-attention over all rows of `x` on the tape.
pub fn multi_head_attention_on<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    ap: &AttentionParams,
    heads: usize,
    x: Var,
    mask: Option<&Mask>,
) -> Result<Var> {
    let rows = tape.shape(x).0;
    segmented_attention_on(tape, params, ap, heads, x, &[(0, rows)], mask)
}

/// Multi-head self-attention: per head, the matching column block of the
/// Q/K/V projections goes through [`scaled_dot_attention`] with that head's
/// relative bias; head outputs are concatenated and projected by `w_o`.
pub fn multi_head_attention<S: Scalar>(
    x: &Matrix<S>,
    params: &ParamSet<S>,
    ap: &AttentionParams,
    heads: usize,
    mask: Option<&Mask>,
) -> Result<Matrix<S>> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let out = multi_head_attention_on(&mut tape, params, ap, heads, xv, mask)?;
    Ok(tape.value(out).clone())
}

/// Mask allowing only keys `j < valid_len` for every query row.
pub fn key_padding_mask(rows: usize, valid_len: usize) -> Mask {
    Matrix::from_fn(rows, rows, |_, j| j < valid_len)
}

/// Mask allowing query `i` to see key `j` only when both lie in a common interval.
pub fn block_diagonal_mask(rows: usize, intervals: &[(usize, usize)]) -> Mask {
    let mut m = Matrix::filled(rows, rows, false);
    for &(s, e) in intervals {
        for i in s..e {
            for j in s..e {
                m.set(i, j, true);
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_row_returns_value() {
        let q = Matrix::from_rows(&[[0.3, -1.0]]).unwrap();
        let v = Matrix::from_rows(&[[7.0, 8.0]]).unwrap();
        let out = scaled_dot_attention(&q, &q, &v, None, None).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn identical_keys_average_values() {
        let q = Matrix::from_rows(&[[1.0, 2.0], [-3.0, 0.5], [0.0, 1.0]]).unwrap();
        let k = Matrix::from_rows(&[[0.2, 0.1], [0.2, 0.1], [0.2, 0.1]]).unwrap();
        let v = Matrix::from_rows(&[[1.0, 0.0], [2.0, 3.0], [6.0, -3.0]]).unwrap();
        let out = scaled_dot_attention(&q, &k, &v, None, None).unwrap();
        for r in 0..3 {
            assert_abs_diff_eq!(out.get(r, 0), 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(out.get(r, 1), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_by_two_hand_evaluation() {
        let id: Matrix<f64> = Matrix::identity(2);
        let out = scaled_dot_attention(&id, &id, &id, None, None).unwrap();
        // Row 0 scores are [1/√2, 0]: weights [e^a/(e^a+1), 1/(e^a+1)].
        let a = 1.0 / 2f64.sqrt();
        let w0 = a.exp() / (a.exp() + 1.0);
        assert_abs_diff_eq!(out.get(0, 0), w0, epsilon = 1e-14);
        assert_abs_diff_eq!(out.get(0, 1), 1.0 - w0, epsilon = 1e-14);
        assert_abs_diff_eq!(out.get(1, 0), 1.0 - w0, epsilon = 1e-14);
        assert_abs_diff_eq!(out.get(1, 1), w0, epsilon = 1e-14);
    }

    #[test]
    fn rel_bias_clips_to_boundary_entry() {
        // Zero Q/K so scores are just the bias; a sentinel at the +R entry
        // must apply to every key at distance >= R.
        let l = 6;
        let q: Matrix<f64> = Matrix::zeros(l, 2);
        let v = Matrix::from_fn(l, 1, |r, _| r as f64);
        let radius = 2;
        let mut bias = vec![0.0; 2 * radius + 1];
        bias[2 * radius] = 50.0;
        let out = scaled_dot_attention(&q, &q, &v, None, Some(&bias)).unwrap();
        // Row 0: keys at distance 2..5 share the sentinel, so the output is
        // their mean (2+3+4+5)/4 up to e^-50 leakage.
        assert_abs_diff_eq!(out.get(0, 0), 3.5, epsilon = 1e-12);
        // Row 3: only keys 5 (distance 2) gets the sentinel.
        assert_abs_diff_eq!(out.get(3, 0), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn masks_have_expected_patterns() {
        let m = key_padding_mask(3, 2);
        assert!(m.get(2, 1) && !m.get(0, 2));
        let b = block_diagonal_mask(4, &[(0, 2), (2, 4)]);
        assert!(b.get(1, 0) && !b.get(1, 2) && b.get(3, 2));
    }
}
