//! CTC alignment: frame-level classifier, loss and gradient by log-space
//! forward-backward, a brute-force path-enumeration oracle, the collapse
//! mapping and best-path decoding.
//!
//! Index 0 is the blank; glosses occupy `1..=V`.

use std::collections::HashMap;

use crate::attention::FeatureSequence;
use crate::error::{Error, Result};
use crate::numcore::scalar::log_add;
use crate::numcore::{ops, Matrix, ParamId, ParamSet, Scalar, Tape, Var};

pub const BLANK: usize = 0;

/// Glosses mapped to indices `1..=V`; the blank (0) is implicit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlossVocabulary {
    glosses: Vec<String>,
    index: HashMap<String, usize>,
}

impl GlossVocabulary {
    pub fn new(glosses: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(glosses.len());
        for (i, g) in glosses.iter().enumerate() {
            if g.is_empty() || g.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid gloss {g:?}")));
            }
            if g == "<blank>" {
                return Err(Error::Config("the blank symbol must not be listed".into()));
            }
            if index.insert(g.clone(), i + 1).is_some() {
                return Err(Error::Config(format!("duplicate gloss {g:?}")));
            }
        }
        Ok(GlossVocabulary { glosses, index })
    }

    /// Number of glosses, excluding the blank.
    pub fn len(&self) -> usize {
        self.glosses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glosses.is_empty()
    }

    /// Output width of a classifier over this vocabulary (glosses + blank).
    pub fn num_classes(&self) -> usize {
        self.glosses.len() + 1
    }

    pub fn glosses(&self) -> &[String] {
        &self.glosses
    }

    pub fn index_of(&self, gloss: &str) -> Option<usize> {
        self.index.get(gloss).copied()
    }

    pub fn gloss(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.glosses.get(i))
            .map(String::as_str)
    }

    pub fn encode<T: AsRef<str>>(&self, glosses: &[T]) -> Result<GlossSequence> {
        glosses
            .iter()
            .map(|g| {
                self.index_of(g.as_ref())
                    .ok_or_else(|| Error::UnknownGloss(g.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()
            .map(GlossSequence)
    }

    pub fn decode(&self, seq: &GlossSequence) -> Vec<String> {
        seq.0
            .iter()
            .map(|&i| self.gloss(i).unwrap_or("<unk>").to_string())
            .collect()
    }
}

/// Gloss labels, never containing the blank.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct GlossSequence(Vec<usize>);

impl GlossSequence {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.contains(&BLANK) {
            return Err(Error::Config("a gloss sequence cannot contain the blank".into()));
        }
        Ok(GlossSequence(labels))
    }

    pub fn empty() -> Self {
        GlossSequence(Vec::new())
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn adjacent_repeats(&self) -> usize {
        self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Minimum frame count a CTC alignment of this sequence needs.
    pub fn min_frames(&self) -> usize {
        self.len() + self.adjacent_repeats()
    }
}

/// Per-frame symbols over `0..=V`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentPath(pub Vec<usize>);

/// Frame-level log-probabilities over blank + glosses.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbMatrix<S> {
    pub logp: Matrix<S>,
    pub valid_len: usize,
}

impl<S: Scalar> LogProbMatrix<S> {
    pub fn new(logp: Matrix<S>) -> Self {
        let valid_len = logp.rows();
        LogProbMatrix { logp, valid_len }
    }

    /// Log-normalizes each row of `logits`.
    pub fn from_logits(logits: &Matrix<S>) -> Self {
        Self::new(ops::log_softmax_rows(logits))
    }

    pub fn num_classes(&self) -> usize {
        self.logp.cols()
    }

    fn check_labels(&self, y: &GlossSequence) -> Result<()> {
        if self.valid_len == 0 || self.valid_len > self.logp.rows() {
            return Err(Error::EmptySequence);
        }
        if let Some(&bad) = y.labels().iter().find(|&&l| l >= self.num_classes() || l == BLANK) {
            return Err(Error::Config(format!(
                "label {bad} outside 1..{} of the probability matrix",
                self.num_classes()
            )));
        }
        let needed = y.min_frames();
        if self.valid_len < needed {
            return Err(Error::Infeasible {
                frames: self.valid_len,
                labels: y.len(),
                repeats: y.adjacent_repeats(),
            });
        }
        Ok(())
    }
}

/// Classifier logits over the valid rows, log-softmaxed per row.
pub fn frame_log_probs_on<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    features: Var,
    valid_len: usize,
    classifier: ParamId,
    bias: ParamId,
) -> Result<Var> {
    let rows = tape.shape(features).0;
    let x = if valid_len < rows {
        tape.slice_rows(features, 0, valid_len)
    } else {
        features
    };
    let w = tape.param(params, classifier);
    let b = tape.param(params, bias);
    let logits = tape.linear(x, w, Some(b))?;
    Ok(tape.log_softmax_rows(logits))
}

pub fn frame_log_probs<S: Scalar>(
    seq: &FeatureSequence<S>,
    params: &ParamSet<S>,
    classifier: ParamId,
    bias: ParamId,
) -> Result<LogProbMatrix<S>> {
    let mut tape = Tape::new();
    let x = tape.input(seq.features.clone());
    let out = frame_log_probs_on(&mut tape, params, x, seq.valid_len, classifier, bias)?;
    Ok(LogProbMatrix::new(tape.value(out).clone()))
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(path: &AlignmentPath) -> GlossSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in &path.0 {
        if Some(s) != prev && s != BLANK {
            out.push(s);
        }
        prev = Some(s);
    }
    GlossSequence(out)
}

/// Largest path count [`ctc_brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// `p(y | x)` by summing `Π_t p_t(path_t)` over every path whose collapse is `y`.
pub fn ctc_brute_force<S: Scalar>(lp: &LogProbMatrix<S>, y: &GlossSequence) -> Result<S> {
    let t_len = lp.valid_len;
    let k = lp.num_classes();
    let paths = (k as f64).powi(t_len as i32);
    if paths > BRUTE_FORCE_LIMIT {
        return Err(Error::OracleScale {
            paths,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let probs = lp.logp.map(|v| v.exp());
    let mut path = vec![0usize; t_len];
    let mut total = S::zero();
    loop {
        let ap = AlignmentPath(path.clone());
        if collapse(&ap) == *y {
            let p = path
                .iter()
                .enumerate()
                .fold(S::one(), |acc, (t, &s)| acc * probs.get(t, s));
            total += p;
        }
        // Odometer increment.
        let mut t = 0;
        loop {
            if t == t_len {
                return Ok(total);
            }
            path[t] += 1;
            if path[t] < k {
                break;
            }
            path[t] = 0;
            t += 1;
        }
    }
}

/// Blank-interleaved label sequence `(∅, y1, ∅, y2, …, ∅)`.
fn extended_labels(y: &GlossSequence) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * y.len() + 1);
    ext.push(BLANK);
    for &l in y.labels() {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

/// Whether state `s` may be entered from `s − 2` (skip over a blank).
fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

struct Lattice<S> {
    ext: Vec<usize>,
    alpha: Matrix<S>,
    beta: Matrix<S>,
    log_p: S,
}

fn forward_backward<S: Scalar>(lp: &LogProbMatrix<S>, y: &GlossSequence) -> Result<Lattice<S>> {
    lp.check_labels(y)?;
    let t_len = lp.valid_len;
    let ext = extended_labels(y);
    let n = ext.len();
    let ninf = S::neg_infinity();
    let emit = |t: usize, s: usize| lp.logp.get(t, ext[s]);

    let mut alpha = Matrix::filled(t_len, n, ninf);
    alpha.set(0, 0, emit(0, 0));
    if n > 1 {
        alpha.set(0, 1, emit(0, 1));
    }
    for t in 1..t_len {
        for s in 0..n {
            let mut acc = alpha.get(t - 1, s);
            if s >= 1 {
                acc = log_add(acc, alpha.get(t - 1, s - 1));
            }
            if can_skip(&ext, s) {
                acc = log_add(acc, alpha.get(t - 1, s - 2));
            }
            if acc != ninf {
                alpha.set(t, s, acc + emit(t, s));
            }
        }
    }

    let mut beta = Matrix::filled(t_len, n, ninf);
    beta.set(t_len - 1, n - 1, emit(t_len - 1, n - 1));
    if n > 1 {
        beta.set(t_len - 1, n - 2, emit(t_len - 1, n - 2));
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..n {
            let mut acc = beta.get(t + 1, s);
            if s + 1 < n {
                acc = log_add(acc, beta.get(t + 1, s + 1));
            }
            if s + 2 < n && can_skip(&ext, s + 2) {
                acc = log_add(acc, beta.get(t + 1, s + 2));
            }
            if acc != ninf {
                beta.set(t, s, acc + emit(t, s));
            }
        }
    }

    let mut log_p = alpha.get(t_len - 1, n - 1);
    if n > 1 {
        log_p = log_add(log_p, alpha.get(t_len - 1, n - 2));
    }
    if !log_p.is_finite() {
        return Err(Error::NonFinite("CTC path probability".into()));
    }
    Ok(Lattice {
        ext,
        alpha,
        beta,
        log_p,
    })
}

/// `−ln p(y | x)` via the log-space forward recursion.
pub fn ctc_loss<S: Scalar>(lp: &LogProbMatrix<S>, y: &GlossSequence) -> Result<S> {
    Ok(-forward_backward(lp, y)?.log_p)
}

/// Loss and its gradient w.r.t. every entry of the valid log-prob rows.
pub fn ctc_loss_and_gradient<S: Scalar>(lp: &LogProbMatrix<S>, y: &GlossSequence) -> Result<(S, Matrix<S>)> {
    let lat = forward_backward(lp, y)?;
    let t_len = lp.valid_len;
    let k = lp.num_classes();
    let mut occupancy = Matrix::filled(t_len, k, S::neg_infinity());
    for t in 0..t_len {
        for (s, &label) in lat.ext.iter().enumerate() {
            let ab = lat.alpha.get(t, s) + lat.beta.get(t, s);
            let cur = occupancy.get(t, label);
            occupancy.set(t, label, log_add(cur, ab));
        }
    }
    // α·β double-counts the emission at t, hence the − logp term.
    let grad = Matrix::from_fn(t_len, k, |t, c| {
        let occ = occupancy.get(t, c);
        if occ == S::neg_infinity() {
            S::zero()
        } else {
            -(occ - lp.logp.get(t, c) - lat.log_p).exp()
        }
    });
    Ok((-lat.log_p, grad))
}

pub fn ctc_gradient<S: Scalar>(lp: &LogProbMatrix<S>, y: &GlossSequence) -> Result<Matrix<S>> {
    Ok(ctc_loss_and_gradient(lp, y)?.1)
}

/// Records the CTC loss of the log-prob node `logp` on the tape.
pub fn ctc_loss_on<S: Scalar>(tape: &mut Tape<S>, logp: Var, y: &GlossSequence) -> Result<Var> {
    let lp = LogProbMatrix::new(tape.value(logp).clone());
    let (loss, grad) = ctc_loss_and_gradient(&lp, y)?;
    tape.loss(logp, loss, grad)
}

/// Per-frame argmax (lowest index on ties, so blank wins), then collapse.
pub fn greedy_decode<S: Scalar>(lp: &LogProbMatrix<S>) -> GlossSequence {
    let path = (0..lp.valid_len).map(|t| lp.logp.argmax_row(t)).collect();
    collapse(&AlignmentPath(path))
}
