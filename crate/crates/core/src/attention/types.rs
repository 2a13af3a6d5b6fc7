use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamId, ParamSet, Scalar};

/// Per-frame features with an explicit valid length; rows at and beyond
/// `valid_len` are padding.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<S> {
    pub features: Matrix<S>,
    pub valid_len: usize,
}

impl<S: Scalar> FeatureSequence<S> {
    pub fn new(features: Matrix<S>, valid_len: usize) -> Result<Self> {
        if valid_len > features.rows() {
            return Err(Error::Config(format!(
                "valid_len {valid_len} exceeds {} rows",
                features.rows()
            )));
        }
        Ok(FeatureSequence { features, valid_len })
    }

    /// Fully valid sequence.
    pub fn full(features: Matrix<S>) -> Self {
        let valid_len = features.rows();
        FeatureSequence { features, valid_len }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_len == 0
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn valid_features(&self) -> Matrix<S> {
        self.features.slice_rows(0, self.valid_len)
    }
}

/// Half-open frame intervals covering `[0, valid_len)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkPlan {
    pub intervals: Vec<(usize, usize)>,
    pub chunk_size: usize,
    pub stride: usize,
}

impl ChunkPlan {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn covered_len(&self) -> usize {
        self.intervals.last().map_or(0, |&(_, e)| e)
    }

    /// Number of intervals containing each frame in `[0, covered_len)`.
    pub fn coverage(&self) -> Vec<usize> {
        let mut cnt = vec![0; self.covered_len()];
        for &(s, e) in &self.intervals {
            cnt[s..e].iter_mut().for_each(|c| *c += 1);
        }
        cnt
    }
}

/// Splits `[0, valid_len)` into windows `[k·stride, min(k·stride + W, valid_len))`
/// until the sequence is covered. A short final window is kept as is.
pub fn make_chunks(valid_len: usize, chunk_size: usize, stride: usize) -> Result<ChunkPlan> {
    if valid_len == 0 {
        return Err(Error::EmptySequence);
    }
    if chunk_size == 0 || stride == 0 || stride > chunk_size {
        return Err(Error::Config(format!(
            "chunk size {chunk_size} with stride {stride} (need 1 <= stride <= chunk size)"
        )));
    }
    let mut intervals = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + chunk_size).min(valid_len);
        intervals.push((start, end));
        if end == valid_len {
            break;
        }
        start += stride;
    }
    Ok(ChunkPlan {
        intervals,
        chunk_size,
        stride,
    })
}

/// Which temporal attention a block uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMode {
    /// Full-sequence multi-head self-attention.
    Vanilla,
    /// Chunked (intra-gloss) attention only.
    Intra,
    /// Chunked attention followed by chunk-level (inter-gloss) attention.
    #[serde(rename = "intra+inter", alias = "intra-inter")]
    IntraInter,
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(AttentionMode::Vanilla),
            "intra" => Ok(AttentionMode::Intra),
            "intra+inter" | "intra-inter" => Ok(AttentionMode::IntraInter),
            other => Err(Error::Config(format!("unknown attention mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionMode::Vanilla => "vanilla",
            AttentionMode::Intra => "intra",
            AttentionMode::IntraInter => "intra+inter",
        })
    }
}

/// Structural hyper-parameters of the encoder stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IigaConfig {
    pub n_blocks: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub chunk_size: usize,
    pub stride: usize,
    pub dropout: f64,
    /// Clip radius of the relative-position bias table.
    pub rel_clip: usize,
    pub mode: AttentionMode,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl IigaConfig {
    /// Full-size configuration (hidden size 1280).
    pub fn full_scale() -> Self {
        IigaConfig {
            n_blocks: 2,
            heads: 8,
            d_model: 1280,
            d_ff: 2048,
            chunk_size: 12,
            stride: 12,
            dropout: 0.1,
            rel_clip: 12,
            mode: AttentionMode::IntraInter,
        }
    }

    pub fn toy() -> Self {
        IigaConfig {
            n_blocks: 2,
            heads: 4,
            d_model: 64,
            d_ff: 128,
            chunk_size: 12,
            stride: 12,
            dropout: 0.1,
            rel_clip: 12,
            mode: AttentionMode::IntraInter,
        }
    }

    pub fn head_width(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be positive".into()));
        }
        if self.chunk_size == 0 || self.stride == 0 || self.stride > self.chunk_size {
            return Err(Error::Config(format!(
                "chunk size {} with stride {}",
                self.chunk_size, self.stride
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

impl Default for IigaConfig {
    fn default() -> Self {
        Self::toy()
    }
}

/// Projection matrices and relative-position bias of one attention layer.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    /// `heads × (2·rel_clip + 1)` additive logit bias.
    pub rel_bias: ParamId,
    pub rel_clip: usize,
}

impl AttentionParams {
    /// Registers `{prefix}.w_q` etc. The projections come from `init(rows, cols)`;
    /// the bias table starts at zero.
    pub fn register<S: Scalar>(
        params: &mut ParamSet<S>,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rel_clip: usize,
        init: &mut impl FnMut(usize, usize) -> Matrix<S>,
    ) -> Result<Self> {
        Ok(AttentionParams {
            w_q: params.add(format!("{prefix}.w_q"), init(d_model, d_model))?,
            w_k: params.add(format!("{prefix}.w_k"), init(d_model, d_model))?,
            w_v: params.add(format!("{prefix}.w_v"), init(d_model, d_model))?,
            w_o: params.add(format!("{prefix}.w_o"), init(d_model, d_model))?,
            rel_bias: params.add(format!("{prefix}.rel_bias"), Matrix::zeros(heads, 2 * rel_clip + 1))?,
            rel_clip,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormParams {
    pub fn register<S: Scalar>(params: &mut ParamSet<S>, prefix: &str, d: usize) -> Result<Self> {
        Ok(NormParams {
            gamma: params.add(format!("{prefix}.gamma"), Matrix::filled(1, d, S::one()))?,
            beta: params.add(format!("{prefix}.beta"), Matrix::zeros(1, d))?,
        })
    }
}

/// One encoder layer. `intra` holds the temporal attention (full-sequence
/// in vanilla mode); `inter` is present only in intra+inter mode.
#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub intra: AttentionParams,
    pub inter: Option<AttentionParams>,
    pub ffn: FfnParams,
    pub norm1: NormParams,
    pub norm2: NormParams,
    pub norm3: NormParams,
}

impl BlockParams {
    pub fn register<S: Scalar>(
        params: &mut ParamSet<S>,
        prefix: &str,
        cfg: &IigaConfig,
        init: &mut impl FnMut(usize, usize) -> Matrix<S>,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let intra = AttentionParams::register(params, &format!("{prefix}.intra"), d, cfg.heads, cfg.rel_clip, init)?;
        let inter = match cfg.mode {
            AttentionMode::IntraInter => Some(AttentionParams::register(
                params,
                &format!("{prefix}.inter"),
                d,
                cfg.heads,
                cfg.rel_clip,
                init,
            )?),
            _ => None,
        };
        let ffn = FfnParams {
            w1: params.add(format!("{prefix}.ffn.w1"), init(d, cfg.d_ff))?,
            b1: params.add(format!("{prefix}.ffn.b1"), Matrix::zeros(1, cfg.d_ff))?,
            w2: params.add(format!("{prefix}.ffn.w2"), init(cfg.d_ff, d))?,
            b2: params.add(format!("{prefix}.ffn.b2"), Matrix::zeros(1, d))?,
        };
        Ok(BlockParams {
            intra,
            inter,
            ffn,
            norm1: NormParams::register(params, &format!("{prefix}.norm1"), d)?,
            norm2: NormParams::register(params, &format!("{prefix}.norm2"), d)?,
            norm3: NormParams::register(params, &format!("{prefix}.norm3"), d)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_agree_across_cli_and_serde() {
        for mode in [AttentionMode::Vanilla, AttentionMode::Intra, AttentionMode::IntraInter] {
            let json = serde_json::to_string(&mode).unwrap();
            assert_eq!(json, format!("\"{mode}\""));
            assert_eq!(mode.to_string().parse::<AttentionMode>().unwrap(), mode);
        }
        let old: AttentionMode = serde_json::from_str("\"intra-inter\"").unwrap();
        assert_eq!(old, AttentionMode::IntraInter);
    }

    #[test]
    fn chunk_examples() {
        assert_eq!(make_chunks(24, 12, 12).unwrap().intervals, vec![(0, 12), (12, 24)]);
        assert_eq!(make_chunks(5, 12, 12).unwrap().intervals, vec![(0, 5)]);
        assert_eq!(
            make_chunks(25, 12, 12).unwrap().intervals,
            vec![(0, 12), (12, 24), (24, 25)]
        );
        assert_eq!(
            make_chunks(24, 12, 6).unwrap().intervals,
            vec![(0, 12), (6, 18), (12, 24)]
        );
        assert!(matches!(make_chunks(0, 12, 12), Err(Error::EmptySequence)));
        assert!(make_chunks(10, 4, 5).is_err());
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let cfg = IigaConfig {
            heads: 3,
            ..IigaConfig::toy()
        };
        assert!(cfg.validate().is_err());
        assert!(IigaConfig::full_scale().validate().is_ok());
    }

    #[test]
    fn full_scale_defaults() {
        let c = IigaConfig::full_scale();
        assert_eq!((c.n_blocks, c.heads, c.d_ff, c.chunk_size), (2, 8, 2048, 12));
    }
}
