//! Exact multiply-add accounting and wall-clock timing of the temporal
//! attention variants.

use std::fmt::Write as _;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::attention::{encode, make_chunks, AttentionMode, BlockParams, FeatureSequence, IigaConfig};
use crate::error::{Error, Result};
use crate::numcore::rng::purpose;
use crate::numcore::{Matrix, ParamSet, RngStream, Scalar};
use crate::trainer::xavier_init;

/// Multiply-add tallies for one attention layer over a length-`t` sequence.
///
/// For intra+inter the pooled attention over `C` chunk summaries adds
/// `4·C·D²` to `projection_flops` and `C²·D` to each of `score_flops` and
/// `weighted_sum_flops`; the mean-pooling adds are in `pooling_flops`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub mode: AttentionMode,
    pub t: u64,
    pub d: u64,
    pub w: u64,
    pub h: u64,
    pub score_flops: u64,
    pub weighted_sum_flops: u64,
    pub projection_flops: u64,
    pub pooling_flops: u64,
    pub total_flops: u64,
}

/// Counts with stride equal to the chunk size.
pub fn flop_count(t: usize, d: usize, w: usize, h: usize, mode: AttentionMode) -> Result<FlopReport> {
    if t == 0 || d == 0 || w == 0 || h == 0 {
        return Err(Error::Config("flop_count needs positive T, D, W and h".into()));
    }
    if !d.is_multiple_of(h) {
        return Err(Error::Config(format!("D = {d} is not divisible by h = {h}")));
    }
    if mode != AttentionMode::Vanilla && w > t {
        return Err(Error::Config(format!("chunk size {w} exceeds T = {t}")));
    }
    let (t64, d64) = (t as u64, d as u64);
    let mut projection = 4 * t64 * d64 * d64;
    let (mut score, mut weighted, mut pooling) = match mode {
        AttentionMode::Vanilla => (t64 * t64 * d64, t64 * t64 * d64, 0),
        AttentionMode::Intra | AttentionMode::IntraInter => {
            let plan = make_chunks(t, w, w)?;
            // Per head (D/h)·L² for each of QKᵀ and AV, summed over h heads.
            let sq: u64 = plan.intervals.iter().map(|&(s, e)| ((e - s) as u64).pow(2)).sum();
            (d64 * sq, d64 * sq, 0)
        }
    };
    if mode == AttentionMode::IntraInter {
        let c = make_chunks(t, w, w)?.len() as u64;
        projection += 4 * c * d64 * d64;
        score += c * c * d64;
        weighted += c * c * d64;
        pooling += t64 * d64;
    }
    Ok(FlopReport {
        mode,
        t: t64,
        d: d64,
        w: w as u64,
        h: h as u64,
        score_flops: score,
        weighted_sum_flops: weighted,
        projection_flops: projection,
        pooling_flops: pooling,
        total_flops: score + weighted + projection + pooling,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub encoder: IigaConfig,
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            encoder: IigaConfig {
                n_blocks: 1,
                heads: 8,
                d_model: 256,
                d_ff: 512,
                ..IigaConfig::toy()
            },
            sizes: vec![48, 96, 192, 256],
            repetitions: 20,
            warmup: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeTiming {
    pub flops: FlopReport,
    pub median_seconds: f64,
    pub mad_seconds: f64,
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub t: usize,
    pub modes: Vec<ModeTiming>,
    /// Vanilla median over intra median.
    pub speedup_intra: f64,
    /// Vanilla median over intra+inter median.
    pub speedup_intra_inter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub precision: String,
    pub config: BenchConfig,
    pub sizes: Vec<SizeReport>,
    /// Soft-gate violations; timing never fails the run.
    pub warnings: Vec<String>,
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6}  {:<12}  {:>14}  {:>12}  {:>12}  {:>8}",
            "T", "mode", "total_flops", "median_ms", "mad_ms", "speedup"
        );
        for s in &self.sizes {
            let vanilla = s.modes[0].median_seconds;
            for m in &s.modes {
                let _ = writeln!(
                    out,
                    "{:>6}  {:<12}  {:>14}  {:>12.3}  {:>12.3}  {:>8.3}",
                    s.t,
                    m.flops.mode.to_string(),
                    m.flops.total_flops,
                    m.median_seconds * 1e3,
                    m.mad_seconds * 1e3,
                    vanilla / m.median_seconds,
                );
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn median_abs_deviation(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

const MODES: [AttentionMode; 3] = [AttentionMode::Vanilla, AttentionMode::Intra, AttentionMode::IntraInter];

/// Times forward-only `encode` in every mode on random input. Warns, never
/// fails, when intra is slower than vanilla at `T ≥ 16·W`.
pub fn bench_attention<S: Scalar>(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.sizes.is_empty() {
        return Err(Error::Config("bench needs at least one sequence length".into()));
    }
    if cfg.repetitions < 20 {
        return Err(Error::Config("bench needs at least 20 repetitions".into()));
    }
    let enc = IigaConfig {
        mode: AttentionMode::IntraInter,
        dropout: 0.0,
        ..cfg.encoder.clone()
    };
    enc.validate()?;
    let mut rng = RngStream::for_purpose(cfg.seed, purpose::BENCH);
    let mut params: ParamSet<S> = ParamSet::new();
    let mut init = |r: usize, c: usize| xavier_init(r, c, &mut rng);
    let blocks = (0..enc.n_blocks)
        .map(|i| BlockParams::register(&mut params, &format!("block{i}"), &enc, &mut init))
        .collect::<Result<Vec<_>>>()?;
    let mut data_rng = RngStream::for_purpose(cfg.seed.wrapping_add(1), purpose::BENCH);

    let mut sizes = Vec::with_capacity(cfg.sizes.len());
    let mut warnings = Vec::new();
    for &t in &cfg.sizes {
        let x = Matrix::from_fn(t, enc.d_model, |_, _| S::of(data_rng.normal()));
        let seq = FeatureSequence::full(x);
        let mut modes = Vec::with_capacity(MODES.len());
        for mode in MODES {
            let mcfg = IigaConfig { mode, ..enc.clone() };
            let mut unused = RngStream::new(0);
            for _ in 0..cfg.warmup {
                encode(&seq, &params, &blocks, &mcfg, &mut unused, false)?;
            }
            let samples = (0..cfg.repetitions)
                .map(|_| {
                    let start = Instant::now();
                    encode(&seq, &params, &blocks, &mcfg, &mut unused, false)?;
                    Ok(start.elapsed().as_secs_f64())
                })
                .collect::<Result<Vec<_>>>()?;
            modes.push(ModeTiming {
                flops: flop_count(t, enc.d_model, enc.chunk_size.min(t), enc.heads, mode)?,
                median_seconds: median(&samples),
                mad_seconds: median_abs_deviation(&samples),
                samples,
            });
        }
        let (v, i, ii) = (
            modes[0].median_seconds,
            modes[1].median_seconds,
            modes[2].median_seconds,
        );
        if t >= 16 * enc.chunk_size && i > v {
            let msg = format!("T = {t}: intra median {i:.6}s exceeds vanilla {v:.6}s");
            warn!("{msg}");
            warnings.push(msg);
        }
        sizes.push(SizeReport {
            t,
            modes,
            speedup_intra: v / i,
            speedup_intra_inter: v / ii,
        });
    }
    Ok(BenchReport {
        precision: std::any::type_name::<S>().to_string(),
        config: cfg.clone(),
        sizes,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_chunk_matches_vanilla_scores() {
        let v = flop_count(12, 16, 12, 4, AttentionMode::Vanilla).unwrap();
        let i = flop_count(12, 16, 12, 4, AttentionMode::Intra).unwrap();
        assert_eq!(v.score_flops, i.score_flops);
        assert_eq!(v.total_flops, i.total_flops);
    }

    #[test]
    fn scaling_in_d() {
        let a = flop_count(64, 16, 8, 4, AttentionMode::Vanilla).unwrap();
        let b = flop_count(64, 32, 8, 4, AttentionMode::Vanilla).unwrap();
        assert_eq!(b.score_flops, 2 * a.score_flops);
        assert_eq!(b.projection_flops, 4 * a.projection_flops);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(flop_count(0, 8, 4, 2, AttentionMode::Vanilla).is_err());
        assert!(flop_count(16, 10, 4, 4, AttentionMode::Vanilla).is_err());
        assert!(flop_count(8, 8, 12, 2, AttentionMode::Intra).is_err());
    }

    #[test]
    fn median_and_mad() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median_abs_deviation(&[1.0, 2.0, 3.0, 4.0, 100.0]), 1.0);
    }
}
