//! Reverse-mode differentiation over the dense primitives.
//!
//! A [`Tape`] records each op with its forward value. [`Tape::backward`]
//! walks the record in reverse, applying each op's backward from
//! [`super::ops`] and accumulating parameter gradients into the
//! [`ParamSet`] the parameters were read from.

use std::collections::HashMap;

use super::matrix::{Mask, Matrix};
use super::ops;
use super::param::{ParamId, ParamSet};
use super::rng::RngStream;
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// A rectangular piece written into a [`Tape::scatter`] output.
#[derive(Clone, Debug)]
pub struct Placement<S> {
    pub src: Var,
    pub row: usize,
    pub col: usize,
    /// Per-source-row multiplier; `None` means 1.
    pub row_weights: Option<Vec<S>>,
}

/// Sparse linear map between row spaces: output row `i` is
/// `Σ w · src[r]` over the `(r, w)` pairs of `terms[i]`.
#[derive(Clone, Debug)]
pub struct RowMap<S> {
    pub terms: Vec<Vec<(usize, S)>>,
}

enum Op<S> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        cache: ops::LayerNormCache<S>,
        beta: Var,
    },
    Dropout(Var, Option<Matrix<S>>),
    Slice {
        src: Var,
        r0: usize,
        c0: usize,
    },
    Scatter(Vec<Placement<S>>),
    RowCombine(Var, RowMap<S>),
    RelBias {
        scores: Var,
        table: Var,
        head: usize,
        radius: usize,
    },
    /// Loss node with a precomputed gradient w.r.t. its input.
    Loss(Var, Matrix<S>),
    SumScalars(Vec<Var>, S),
}

struct Node<S> {
    value: Matrix<S>,
    op: Op<S>,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, value: Matrix<S>) -> Var {
        self.push(value, Op::Input)
    }

    /// Reads a parameter; repeated reads of one parameter share a node.
    pub fn param(&mut self, params: &ParamSet<S>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(params.value(id).clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(value, Op::MatMulNt(a, b)))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let mut value = self.value(x).clone();
        ops::add_row_bias(&mut value, self.value(bias))?;
        Ok(self.push(value, Op::AddBias(x, bias)))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = ops::relu(self.value(a));
        self.push(value, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var> {
        let value = ops::softmax_rows(self.value(a), mask)?;
        Ok(self.push(value, Op::Softmax(a)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = ops::log_softmax_rows(self.value(a));
        self.push(value, Op::LogSoftmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let (value, cache) = ops::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, cache, beta }))
    }

    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RngStream, training: bool) -> Result<Var> {
        let (value, mask) = ops::dropout(self.value(x), rate, rng, training)?;
        if mask.is_none() {
            return Ok(x);
        }
        Ok(self.push(value, Op::Dropout(x, mask)))
    }

    /// Copy of the block `[r0, r1) × [c0, c1)` of `src`.
    pub fn slice(&mut self, src: Var, r0: usize, r1: usize, c0: usize, c1: usize) -> Var {
        let value = self.value(src).block(r0, r1, c0, c1);
        self.push(value, Op::Slice { src, r0, c0 })
    }

    pub fn slice_rows(&mut self, src: Var, r0: usize, r1: usize) -> Var {
        let cols = self.shape(src).1;
        self.slice(src, r0, r1, 0, cols)
    }

    /// Zero `rows × cols` matrix with each placement added at its offset.
    pub fn scatter(&mut self, rows: usize, cols: usize, parts: Vec<Placement<S>>) -> Result<Var> {
        let mut value = Matrix::zeros(rows, cols);
        for p in &parts {
            let src = self.value(p.src);
            if p.row + src.rows() > rows || p.col + src.cols() > cols {
                return Err(Error::Dimension {
                    op: "scatter",
                    left: (rows, cols),
                    right: (p.row + src.rows(), p.col + src.cols()),
                });
            }
            for r in 0..src.rows() {
                let w = p.row_weights.as_ref().map_or(S::one(), |ws| ws[r]);
                let out = &mut value.row_mut(p.row + r)[p.col..p.col + src.cols()];
                for (o, &s) in out.iter_mut().zip(src.row(r)) {
                    *o += w * s;
                }
            }
        }
        Ok(self.push(value, Op::Scatter(parts)))
    }

    pub fn row_combine(&mut self, src: Var, map: RowMap<S>) -> Result<Var> {
        let x = self.value(src);
        let mut value = Matrix::zeros(map.terms.len(), x.cols());
        for (i, terms) in map.terms.iter().enumerate() {
            for &(r, w) in terms {
                if r >= x.rows() {
                    return Err(Error::Dimension {
                        op: "row_combine",
                        left: x.shape(),
                        right: (r, 0),
                    });
                }
                for (o, &s) in value.row_mut(i).iter_mut().zip(x.row(r)) {
                    *o += w * s;
                }
            }
        }
        Ok(self.push(value, Op::RowCombine(src, map)))
    }

    /// Adds `table[head, clamp(j − i, −R, R) + R]` to `scores[i, j]`.
    pub fn rel_bias(&mut self, scores: Var, table: Var, head: usize, radius: usize) -> Result<Var> {
        let t = self.value(table);
        if head >= t.rows() || t.cols() != 2 * radius + 1 {
            return Err(Error::Dimension {
                op: "rel_bias table",
                left: t.shape(),
                right: (head + 1, 2 * radius + 1),
            });
        }
        let bias = t.row(head).to_vec();
        let mut value = self.value(scores).clone();
        for i in 0..value.rows() {
            for (j, v) in value.row_mut(i).iter_mut().enumerate() {
                *v += bias[rel_index(i, j, radius)];
            }
        }
        Ok(self.push(
            value,
            Op::RelBias {
                scores,
                table,
                head,
                radius,
            },
        ))
    }

    /// Records an externally computed scalar loss with its gradient w.r.t. `input`.
    pub fn loss(&mut self, input: Var, value: S, grad: Matrix<S>) -> Result<Var> {
        grad.ensure_shape("loss gradient", self.shape(input).0, self.shape(input).1)?;
        Ok(self.push(Matrix::scalar(value), Op::Loss(input, grad)))
    }

    /// `scale · Σ items` over `1 × 1` nodes.
    pub fn sum_scalars(&mut self, items: Vec<Var>, scale: S) -> Var {
        let total: S = items.iter().map(|&v| self.value(v).get(0, 0)).sum();
        self.push(Matrix::scalar(total * scale), Op::SumScalars(items, scale))
    }

    /// Back-propagates from the `1 × 1` node `root`, adding parameter
    /// gradients into `params`.
    pub fn backward(&self, root: Var, params: &mut ParamSet<S>) -> Result<()> {
        let root_shape = self.shape(root);
        if root_shape != (1, 1) {
            return Err(Error::Dimension {
                op: "backward root",
                left: root_shape,
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix<S>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Matrix::scalar(S::one()));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => params.get_mut(*id).grad.axpy(S::one(), &g)?,
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::MatMulNt(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let da = g.matmul(self.value(*b))?;
                    let db = g.matmul_tn(self.value(*a))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::AddBias(x, b) => {
                    accumulate(&mut grads, *b, g.sum_rows())?;
                    accumulate(&mut grads, *x, g)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s))?,
                Op::Relu(a) => {
                    let dx = ops::relu_backward(self.value(*a), &g);
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::Softmax(a) => {
                    let dx = ops::softmax_rows_backward(&node.value, &g);
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::LogSoftmax(a) => {
                    let dx = ops::log_softmax_rows_backward(&node.value, &g);
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::LayerNorm { x, gamma, cache, beta } => {
                    let lg = ops::layer_norm_backward(cache, self.value(*gamma), &g);
                    accumulate(&mut grads, *x, lg.x)?;
                    accumulate(&mut grads, *gamma, lg.gamma)?;
                    accumulate(&mut grads, *beta, lg.beta)?;
                }
                Op::Dropout(x, mask) => {
                    let dx = match mask {
                        Some(m) => g.hadamard(m)?,
                        None => g,
                    };
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Slice { src, r0, c0 } => {
                    let (rows, cols) = self.shape(*src);
                    let mut dx = Matrix::zeros(rows, cols);
                    for r in 0..g.rows() {
                        dx.row_mut(r0 + r)[*c0..*c0 + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *src, dx)?;
                }
                Op::Scatter(parts) => {
                    for p in parts {
                        let (rows, cols) = self.shape(p.src);
                        let dx = Matrix::from_fn(rows, cols, |r, c| {
                            let w = p.row_weights.as_ref().map_or(S::one(), |ws| ws[r]);
                            w * g.get(p.row + r, p.col + c)
                        });
                        accumulate(&mut grads, p.src, dx)?;
                    }
                }
                Op::RowCombine(src, map) => {
                    let (rows, cols) = self.shape(*src);
                    let mut dx = Matrix::zeros(rows, cols);
                    for (i, terms) in map.terms.iter().enumerate() {
                        for &(r, w) in terms {
                            for (d, &gv) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                                *d += w * gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *src, dx)?;
                }
                Op::RelBias {
                    scores,
                    table,
                    head,
                    radius,
                } => {
                    let (trows, tcols) = self.shape(*table);
                    let mut dt = Matrix::zeros(trows, tcols);
                    for i in 0..g.rows() {
                        for (j, &gv) in g.row(i).iter().enumerate() {
                            let k = rel_index(i, j, *radius);
                            let cur = dt.get(*head, k);
                            dt.set(*head, k, cur + gv);
                        }
                    }
                    accumulate(&mut grads, *table, dt)?;
                    accumulate(&mut grads, *scores, g)?;
                }
                Op::Loss(input, lg) => {
                    accumulate(&mut grads, *input, lg.scale(g.get(0, 0)))?;
                }
                Op::SumScalars(items, s) => {
                    let gv = g.get(0, 0) * *s;
                    for &v in items {
                        accumulate(&mut grads, v, Matrix::scalar(gv))?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn rel_index(i: usize, j: usize, radius: usize) -> usize {
    let d = j as isize - i as isize;
    let r = radius as isize;
    (d.clamp(-r, r) + r) as usize
}

fn accumulate<S: Scalar>(grads: &mut [Option<Matrix<S>>], v: Var, g: Matrix<S>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.axpy(S::one(), &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
