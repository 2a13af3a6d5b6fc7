//! Word error rate and its edit-operation decomposition.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub subs: usize,
    pub dels: usize,
    pub ins: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.subs + self.dels + self.ins
    }
}

impl std::ops::Add for EditCounts {
    type Output = EditCounts;

    fn add(self, o: EditCounts) -> EditCounts {
        EditCounts {
            subs: self.subs + o.subs,
            dels: self.dels + o.dels,
            ins: self.ins + o.ins,
        }
    }
}

/// Unit-cost Levenshtein alignment of `hypothesis` against `reference`.
///
/// Where several optimal alignments exist the backtrace prefers
/// match > substitution > deletion > insertion, so the split into
/// (subs, dels, ins) is reproducible.
pub fn edit_ops<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = i;
    }
    for (j, c) in cost[..w].iter_mut().enumerate() {
        *c = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = cost[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = cost[(i - 1) * w + j] + 1;
            let ins = cost[i * w + j - 1] + 1;
            cost[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = cost[(i - 1) * w + j - 1];
            if same && diag == here {
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && diag + 1 == here {
                counts.subs += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[(i - 1) * w + j] + 1 == here {
            counts.dels += 1;
            i -= 1;
        } else {
            counts.ins += 1;
            j -= 1;
        }
    }
    counts
}

/// Corpus-level WER: all edit counts summed, divided by the total
/// reference length.
pub fn wer<T: PartialEq, R: AsRef<[T]>, H: AsRef<[T]>>(pairs: &[(R, H)]) -> Result<f64> {
    let mut edits = EditCounts::default();
    let mut ref_len = 0;
    for (r, h) in pairs {
        edits = edits + edit_ops(r.as_ref(), h.as_ref());
        ref_len += r.as_ref().len();
    }
    wer_from_counts(edits, ref_len)
}

pub fn wer_from_counts(edits: EditCounts, reference_len: usize) -> Result<f64> {
    if reference_len == 0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(edits.total() as f64 / reference_len as f64)
}
