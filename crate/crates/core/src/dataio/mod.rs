//! Samples, segmentation masks, stochastic frame dropping, padded batches,
//! the synthetic gloss corpus and the on-disk formats.

mod files;
mod synth;

pub use files::{
    read_dataset, read_hypotheses, read_masks, read_records, read_vocabulary, vocabulary_from_records, write_dataset,
    write_hypotheses, write_vocabulary, DatasetRecord, HypothesisLine,
};
pub use synth::{gen_dataset, synth_vocabulary, SynthConfig};

use crate::ctc::GlossSequence;
use crate::error::{Error, Result};
use crate::numcore::{Mask, Matrix, RngStream};

/// One utterance: raw per-frame features and its gloss labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub id: String,
    /// `T × frame_w`.
    pub frames: Matrix<f64>,
    pub glosses: GlossSequence,
}

impl RawSample {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn frame_width(&self) -> usize {
        self.frames.cols()
    }
}

/// Per-element foreground probability in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegMask {
    values: Matrix<f64>,
}

impl SegMask {
    pub fn new(values: Matrix<f64>) -> Result<Self> {
        if let Some(bad) = values.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("mask value {bad} outside [0, 1]")));
        }
        Ok(SegMask { values })
    }

    /// Stand-in for a real segmenter: keeps everything.
    pub fn identity(rows: usize, cols: usize) -> Self {
        SegMask {
            values: Matrix::filled(rows, cols, 1.0),
        }
    }

    pub fn values(&self) -> &Matrix<f64> {
        &self.values
    }
}

/// Element-wise product `frame ⊙ mask`.
pub fn apply_seg_mask(frame: &Matrix<f64>, mask: &SegMask) -> Result<Matrix<f64>> {
    frame.hadamard(&mask.values)
}

/// Masks every frame of `sample`; a `1 × frame_w` mask is shared by all
/// frames, a `T × frame_w` mask applies row by row.
pub fn mask_sample(sample: &RawSample, mask: &SegMask) -> Result<RawSample> {
    let (t, w) = sample.frames.shape();
    let m = mask.values();
    let frames = if m.shape() == (t, w) {
        apply_seg_mask(&sample.frames, mask)?
    } else if m.shape() == (1, w) {
        let mut out = sample.frames.clone();
        for r in 0..t {
            let row = Matrix::row_vector(sample.frames.row(r));
            out.row_mut(r).copy_from_slice(apply_seg_mask(&row, mask)?.row(0));
        }
        out
    } else {
        return Err(Error::Dimension {
            op: "mask_sample",
            left: (t, w),
            right: m.shape(),
        });
    };
    Ok(RawSample {
        frames,
        ..sample.clone()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropMode {
    /// Uniform random subset without replacement.
    Train,
    /// Deterministic centered stride.
    Test,
}

/// Frames kept by [`frame_drop`]: `max(1, round(T·(1 − ratio)))`.
pub fn kept_frames(num_frames: usize, ratio: f64) -> usize {
    ((num_frames as f64 * (1.0 - ratio)).round() as usize).clamp(1, num_frames.max(1))
}

/// Increasing frame indices kept by [`frame_drop`].
pub fn frame_drop_indices(num_frames: usize, ratio: f64, rng: &mut RngStream, mode: DropMode) -> Vec<usize> {
    let keep = kept_frames(num_frames, ratio);
    if keep >= num_frames {
        return (0..num_frames).collect();
    }
    match mode {
        DropMode::Train => rng.sample_sorted(num_frames, keep),
        // floor((i + 0.5) · T / K) in exact integer arithmetic.
        DropMode::Test => (0..keep).map(|i| (2 * i + 1) * num_frames / (2 * keep)).collect(),
    }
}

/// Keeps a subset of frames in their original order.
pub fn frame_drop(sample: &RawSample, ratio: f64, rng: &mut RngStream, mode: DropMode) -> Result<RawSample> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("drop ratio {ratio} outside [0, 1)")));
    }
    let t = sample.num_frames();
    let keep = kept_frames(t, ratio);
    let needed = sample.glosses.min_frames();
    if keep < needed {
        return Err(Error::InfeasibleAfterDrop {
            id: sample.id.clone(),
            frames: t,
            kept: keep,
            needed,
        });
    }
    if ratio == 0.0 {
        return Ok(sample.clone());
    }
    let idx = frame_drop_indices(t, ratio, rng, mode);
    Ok(RawSample {
        id: sample.id.clone(),
        frames: sample.frames.select_rows(&idx),
        glosses: sample.glosses.clone(),
    })
}

/// Sequences zero-padded to the longest one.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B·T_max × frame_w`; sequence `b` occupies rows `b·T_max..(b+1)·T_max`.
    pub features: Matrix<f64>,
    pub lengths: Vec<usize>,
    /// `B × T_max`, `true` on real frames.
    pub pad_mask: Mask,
    pub max_len: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// The `T_max × frame_w` block of sequence `b`.
    pub fn sequence(&self, b: usize) -> Matrix<f64> {
        self.features.slice_rows(b * self.max_len, (b + 1) * self.max_len)
    }
}

pub fn pad_batch(samples: &[RawSample]) -> Result<Batch> {
    let first = samples.first().ok_or(Error::EmptyBatch)?;
    let width = first.frame_width();
    let max_len = samples.iter().map(RawSample::num_frames).max().unwrap_or(0);
    let mut features = Matrix::zeros(samples.len() * max_len, width);
    let mut pad_mask = Matrix::filled(samples.len(), max_len, false);
    let mut lengths = Vec::with_capacity(samples.len());
    for (b, s) in samples.iter().enumerate() {
        if s.frame_width() != width {
            return Err(Error::Dimension {
                op: "pad_batch",
                left: (0, width),
                right: s.frames.shape(),
            });
        }
        for t in 0..s.num_frames() {
            features.row_mut(b * max_len + t).copy_from_slice(s.frames.row(t));
            pad_mask.set(b, t, true);
        }
        lengths.push(s.num_frames());
    }
    Ok(Batch {
        features,
        lengths,
        pad_mask,
        max_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: usize, glosses: &[usize]) -> RawSample {
        RawSample {
            id: "s".into(),
            frames: Matrix::from_fn(t, 2, |r, c| (r * 2 + c) as f64),
            glosses: GlossSequence::new(glosses.to_vec()).unwrap(),
        }
    }

    #[test]
    fn seg_mask_examples() {
        let f = Matrix::from_rows(&[[2.0, 4.0]]).unwrap();
        assert_eq!(apply_seg_mask(&f, &SegMask::identity(1, 2)).unwrap(), f);
        let zero = SegMask::new(Matrix::zeros(1, 2)).unwrap();
        assert_eq!(apply_seg_mask(&f, &zero).unwrap(), Matrix::zeros(1, 2));
        let half = SegMask::new(Matrix::from_rows(&[[0.5, 1.0]]).unwrap()).unwrap();
        assert_eq!(
            apply_seg_mask(&f, &half).unwrap(),
            Matrix::from_rows(&[[1.0, 4.0]]).unwrap()
        );
        assert!(SegMask::new(Matrix::filled(1, 1, 1.5)).is_err());
        assert!(apply_seg_mask(&f, &SegMask::identity(2, 2)).is_err());
    }

    #[test]
    fn mask_sample_broadcasts_single_row() {
        let s = sample(3, &[1]);
        let m = SegMask::new(Matrix::from_rows(&[[0.0, 1.0]]).unwrap()).unwrap();
        let out = mask_sample(&s, &m).unwrap();
        for r in 0..3 {
            assert_eq!(out.frames.get(r, 0), 0.0);
            assert_eq!(out.frames.get(r, 1), s.frames.get(r, 1));
        }
    }

    #[test]
    fn frame_drop_examples() {
        let s = sample(10, &[1, 2]);
        let mut rng = RngStream::new(5);
        assert_eq!(frame_drop(&s, 0.0, &mut rng, DropMode::Train).unwrap(), s);

        let idx = frame_drop_indices(10, 0.5, &mut rng, DropMode::Test);
        assert_eq!(idx, vec![1, 3, 5, 7, 9]);
        let out = frame_drop(&s, 0.5, &mut rng, DropMode::Test).unwrap();
        assert_eq!(out.frames, s.frames.select_rows(&idx));

        let idx = frame_drop_indices(10, 0.5, &mut rng, DropMode::Train);
        assert_eq!(idx.len(), 5);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn infeasible_drop_is_reported() {
        let s = sample(4, &[1, 1]);
        let err = frame_drop(&s, 0.5, &mut RngStream::new(0), DropMode::Test).unwrap_err();
        assert!(matches!(err, Error::InfeasibleAfterDrop { kept: 2, needed: 3, .. }));
    }

    #[test]
    fn pad_batch_examples() {
        let b = pad_batch(&[sample(3, &[1]), sample(5, &[1])]).unwrap();
        assert_eq!(b.max_len, 5);
        assert_eq!(b.lengths, vec![3, 5]);
        let trues = |row: usize| (0..5).filter(|&t| b.pad_mask.get(row, t)).count();
        assert_eq!((trues(0), trues(1)), (3, 5));
        assert!(b.sequence(0).row(4).iter().all(|&v| v == 0.0));

        let single = pad_batch(&[sample(4, &[1])]).unwrap();
        assert!(single.pad_mask.as_slice().iter().all(|&m| m));
        let ones = pad_batch(&[sample(1, &[1]), sample(1, &[2]), sample(1, &[1])]).unwrap();
        assert_eq!(ones.max_len, 1);
        assert!(matches!(pad_batch(&[]), Err(Error::EmptyBatch)));
    }
}
