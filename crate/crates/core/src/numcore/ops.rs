//! Forward and backward passes of the dense primitives.
//!
//! Each op is a pair of pure functions: the forward computes the output
//! (plus whatever cache the backward needs), the backward maps the upstream
//! gradient to gradients of the inputs. [`crate::numcore::tape::Tape`]
//! composes them; they can also be called directly.

use super::matrix::{Mask, Matrix};
use super::rng::RngStream;
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// `x · weight (+ bias)`.
pub fn linear<S: Scalar>(x: &Matrix<S>, weight: &Matrix<S>, bias: Option<&Matrix<S>>) -> Result<Matrix<S>> {
    let mut out = x.matmul(weight)?;
    if let Some(b) = bias {
        add_row_bias(&mut out, b)?;
    }
    Ok(out)
}

pub struct LinearGrads<S> {
    pub x: Matrix<S>,
    pub weight: Matrix<S>,
    pub bias: Matrix<S>,
}

pub fn linear_backward<S: Scalar>(x: &Matrix<S>, weight: &Matrix<S>, grad_out: &Matrix<S>) -> Result<LinearGrads<S>> {
    Ok(LinearGrads {
        x: grad_out.matmul_nt(weight)?,
        weight: x.matmul_tn(grad_out)?,
        bias: grad_out.sum_rows(),
    })
}

/// Adds a `1 × cols` bias to every row.
pub fn add_row_bias<S: Scalar>(x: &mut Matrix<S>, bias: &Matrix<S>) -> Result<()> {
    if bias.rows() != 1 || bias.cols() != x.cols() {
        return Err(Error::Dimension {
            op: "bias",
            left: x.shape(),
            right: bias.shape(),
        });
    }
    let b = bias.row(0).to_vec();
    for r in 0..x.rows() {
        for (v, &bb) in x.row_mut(r).iter_mut().zip(&b) {
            *v += bb;
        }
    }
    Ok(())
}

fn check_mask<S: Scalar>(scores: &Matrix<S>, mask: Option<&Mask>) -> Result<()> {
    if let Some(m) = mask {
        if m.shape() != scores.shape() {
            return Err(Error::Dimension {
                op: "softmax mask",
                left: scores.shape(),
                right: m.shape(),
            });
        }
    }
    Ok(())
}

/// Row-wise softmax with max subtraction. Masked positions (`false`) are
/// exactly zero; a row with no allowed position is an error.
pub fn softmax_rows<S: Scalar>(scores: &Matrix<S>, mask: Option<&Mask>) -> Result<Matrix<S>> {
    check_mask(scores, mask)?;
    let mut out = Matrix::zeros(scores.rows(), scores.cols());
    for r in 0..scores.rows() {
        let allowed = |c: usize| mask.is_none_or(|m| m.get(r, c));
        let row = scores.row(r);
        let mut max = S::neg_infinity();
        for (c, &x) in row.iter().enumerate() {
            if allowed(c) && x > max {
                max = x;
            }
        }
        if max == S::neg_infinity() {
            return Err(Error::DegenerateRow { row: r });
        }
        let o = out.row_mut(r);
        let mut sum = S::zero();
        for (c, &x) in row.iter().enumerate() {
            if allowed(c) {
                let e = (x - max).exp();
                o[c] = e;
                sum += e;
            }
        }
        let inv = S::one() / sum;
        o.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}

/// Given `y = softmax(x)` and `dy`, returns `dx = y ⊙ (dy − ⟨dy, y⟩)`.
pub fn softmax_rows_backward<S: Scalar>(y: &Matrix<S>, dy: &Matrix<S>) -> Matrix<S> {
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let dyr = dy.row(r);
        let inner: S = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        for ((d, &a), &b) in dx.row_mut(r).iter_mut().zip(yr).zip(dyr) {
            *d = a * (b - inner);
        }
    }
    dx
}

pub fn log_softmax_rows<S: Scalar>(x: &Matrix<S>) -> Matrix<S> {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Given `y = log_softmax(x)` and `dy`, returns `dx = dy − softmax(x) · Σ dy`.
pub fn log_softmax_rows_backward<S: Scalar>(y: &Matrix<S>, dy: &Matrix<S>) -> Matrix<S> {
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let total: S = dy.row(r).iter().copied().sum();
        for ((d, &ly), &g) in dx.row_mut(r).iter_mut().zip(y.row(r)).zip(dy.row(r)) {
            *d = g - ly.exp() * total;
        }
    }
    dx
}

/// Normalized input and per-row inverse standard deviation.
#[derive(Clone, Debug)]
pub struct LayerNormCache<S> {
    pub normalized: Matrix<S>,
    pub inv_std: Vec<S>,
}

pub fn layer_norm<S: Scalar>(
    x: &Matrix<S>,
    gamma: &Matrix<S>,
    beta: &Matrix<S>,
    eps: S,
) -> Result<(Matrix<S>, LayerNormCache<S>)> {
    let d = x.cols();
    gamma.ensure_shape("layer_norm gamma", 1, d)?;
    beta.ensure_shape("layer_norm beta", 1, d)?;
    let dn = S::of_usize(d);
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<S>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
        let is = S::one() / (var + eps).sqrt();
        inv_std.push(is);
        let nr = normalized.row_mut(r);
        for (n, &v) in nr.iter_mut().zip(row) {
            *n = (v - mean) * is;
        }
        let nr = normalized.row(r).to_vec();
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = nr[c] * gamma.get(0, c) + beta.get(0, c);
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

pub struct LayerNormGrads<S> {
    pub x: Matrix<S>,
    pub gamma: Matrix<S>,
    pub beta: Matrix<S>,
}

pub fn layer_norm_backward<S: Scalar>(
    cache: &LayerNormCache<S>,
    gamma: &Matrix<S>,
    dy: &Matrix<S>,
) -> LayerNormGrads<S> {
    let (rows, d) = dy.shape();
    let dn = S::of_usize(d);
    let mut dx = Matrix::zeros(rows, d);
    let mut dgamma = Matrix::zeros(1, d);
    let mut dbeta = Matrix::zeros(1, d);
    let g = gamma.row(0);
    for r in 0..rows {
        let xh = cache.normalized.row(r);
        let dyr = dy.row(r);
        let mut sum_dxh = S::zero();
        let mut sum_dxh_xh = S::zero();
        for c in 0..d {
            let dxh = dyr[c] * g[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[c];
            dgamma.as_mut_slice()[c] += dyr[c] * xh[c];
            dbeta.as_mut_slice()[c] += dyr[c];
        }
        let is = cache.inv_std[r];
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            let dxh = dyr[c] * g[c];
            *o = is / dn * (dn * dxh - sum_dxh - xh[c] * sum_dxh_xh);
        }
    }
    LayerNormGrads {
        x: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

pub fn relu<S: Scalar>(x: &Matrix<S>) -> Matrix<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Subgradient 0 at 0.
pub fn relu_backward<S: Scalar>(x: &Matrix<S>, dy: &Matrix<S>) -> Matrix<S> {
    Matrix::from_fn(x.rows(), x.cols(), |r, c| {
        if x.get(r, c) > S::zero() {
            dy.get(r, c)
        } else {
            S::zero()
        }
    })
}

/// `linear(relu(linear(x, w1, b1)), w2, b2)`.
pub fn feed_forward<S: Scalar>(
    x: &Matrix<S>,
    w1: &Matrix<S>,
    b1: &Matrix<S>,
    w2: &Matrix<S>,
    b2: &Matrix<S>,
) -> Result<Matrix<S>> {
    let hidden = relu(&linear(x, w1, Some(b1))?);
    linear(&hidden, w2, Some(b2))
}

/// Inverted dropout. Returns the output and the multiplicative mask
/// (0 or `1/(1−rate)` per element) the backward pass reuses.
///
/// With `training == false` or `rate == 0` this is the identity and draws
/// nothing from `rng`.
pub fn dropout<S: Scalar>(
    x: &Matrix<S>,
    rate: f64,
    rng: &mut RngStream,
    training: bool,
) -> Result<(Matrix<S>, Option<Matrix<S>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = S::of(1.0 / (1.0 - rate));
    let mask = Matrix::from_fn(
        x.rows(),
        x.cols(),
        |_, _| {
            if rng.uniform() < rate {
                S::zero()
            } else {
                keep
            }
        },
    );
    let out = x.hadamard(&mask)?;
    Ok((out, Some(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn linear_examples() {
        let x = m(&[&[1.0, -2.0, 0.5], &[3.0, 4.0, 5.0], &[0.0, 1.0, 2.0]]);
        assert_eq!(linear(&x, &Matrix::identity(3), None).unwrap(), x);

        let x2 = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let out = linear(&x2, &Matrix::zeros(2, 2), Some(&m(&[&[1.0, 2.0]]))).unwrap();
        assert_eq!(out, m(&[&[1.0, 2.0], &[1.0, 2.0]]));

        let out = linear(&m(&[&[1.0, 2.0]]), &m(&[&[1.0, 0.0], &[0.0, 3.0]]), None).unwrap();
        assert_eq!(out, m(&[&[1.0, 6.0]]));
    }

    #[test]
    fn linear_shape_mismatch() {
        let err = linear(&Matrix::<f64>::zeros(2, 3), &Matrix::zeros(2, 2), None).unwrap_err();
        assert!(matches!(
            err,
            Error::Dimension {
                left: (2, 3),
                right: (2, 2),
                ..
            }
        ));
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_rows(&m(&[&[1.0, 1.0, 1.0]]), None).unwrap();
        for &v in y.row(0) {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }

        let mask = Matrix::from_rows(&[[true, false]]).unwrap();
        let y = softmax_rows(&m(&[&[5.0, 123.0]]), Some(&mask)).unwrap();
        assert_eq!(y.row(0), &[1.0, 0.0]);

        let y = softmax_rows(&m(&[&[0.0, 2f64.ln()]]), None).unwrap();
        assert_abs_diff_eq!(y.get(0, 0), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y.get(0, 1), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn fully_masked_row_is_degenerate() {
        let mask = Matrix::from_rows(&[[true, true], [false, false]]).unwrap();
        let err = softmax_rows(&m(&[&[0.0, 0.0], &[1.0, 2.0]]), Some(&mask)).unwrap_err();
        assert!(matches!(err, Error::DegenerateRow { row: 1 }));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Matrix::filled(1, 4, 1.0);
        let zeros = Matrix::zeros(1, 4);
        let (y, _) = layer_norm(&m(&[&[3.0, 3.0, 3.0, 3.0]]), &ones, &zeros, 1e-12).unwrap();
        for &v in y.row(0) {
            assert!(v.abs() <= f64::EPSILON.sqrt());
        }

        let (y, _) = layer_norm(
            &m(&[&[1.0, -1.0]]),
            &Matrix::filled(1, 2, 1.0),
            &Matrix::zeros(1, 2),
            1e-12,
        )
        .unwrap();
        assert_abs_diff_eq!(y.get(0, 0), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(y.get(0, 1), -1.0, epsilon = 1e-9);

        let (y, _) = layer_norm(&m(&[&[0.3, -8.0, 2.5, 1.0]]), &zeros, &Matrix::filled(1, 4, 7.0), 1e-5).unwrap();
        assert!(y.row(0).iter().all(|&v| v == 7.0));
    }

    #[test]
    fn feed_forward_examples() {
        let x = m(&[&[0.4, -1.0], &[2.0, 3.0]]);
        let out = feed_forward(
            &x,
            &Matrix::zeros(2, 3),
            &Matrix::zeros(1, 3),
            &Matrix::zeros(3, 2),
            &m(&[&[5.0, -1.0]]),
        )
        .unwrap();
        assert_eq!(out, m(&[&[5.0, -1.0], &[5.0, -1.0]]));

        // Negative inputs land in the rectifier's dead zone.
        let neg = m(&[&[-1.0, -2.0]]);
        let out = feed_forward(
            &neg,
            &Matrix::identity(2),
            &Matrix::zeros(1, 2),
            &m(&[&[4.0, 1.0], &[2.0, 9.0]]),
            &m(&[&[0.5, 0.25]]),
        )
        .unwrap();
        assert_eq!(out, m(&[&[0.5, 0.25]]));

        let out = feed_forward(
            &m(&[&[1.0]]),
            &m(&[&[2.0]]),
            &m(&[&[-1.0]]),
            &m(&[&[3.0]]),
            &m(&[&[0.0]]),
        )
        .unwrap();
        assert_eq!(out, m(&[&[3.0]]));
    }

    #[test]
    fn dropout_examples() {
        let x = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 - 5.5);
        let mut rng = RngStream::new(1);
        let (y, _) = dropout(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y, x);
        let (y, _) = dropout(&x, 0.9, &mut rng, false).unwrap();
        assert_eq!(y, x);
        assert_eq!(rng.position(), 0);

        let big = Matrix::filled(100, 100, 1.0);
        let (y, _) = dropout(&big, 0.5, &mut RngStream::new(2024), true).unwrap();
        let kept = y.as_slice().iter().filter(|&&v| v != 0.0).count();
        let frac = kept as f64 / 1e4;
        assert!((frac - 0.5).abs() <= 0.02, "kept fraction {frac}");
        assert!(y.as_slice().iter().all(|&v| v == 0.0 || v == 2.0));

        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let x = m(&[&[0.3, -2.0, 4.0], &[1e3, 0.0, -1e3]]);
        let ls = log_softmax_rows(&x);
        let s = softmax_rows(&x, None).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                if s.get(r, c) > 1e-300 {
                    assert_abs_diff_eq!(ls.get(r, c), s.get(r, c).ln(), epsilon = 1e-12);
                }
            }
        }
    }
}
