//! Toy-scale experiments: attention-mode ablation and chunk-size sweep.
//! Every cell trains from scratch and reports the best dev WER over epochs.

use std::fmt::Write as _;

use log::info;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMode, IigaConfig};
use crate::ctc::GlossVocabulary;
use crate::dataio::{gen_dataset, synth_vocabulary, RawSample, SynthConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::{TrainConfig, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub n_train: usize,
    pub n_dev: usize,
    pub encoder: IigaConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            n_train: 300,
            n_dev: 50,
            encoder: IigaConfig::toy(),
            train: TrainConfig::default(),
        }
    }
}

pub struct ToyData {
    pub train: Vec<RawSample>,
    pub dev: Vec<RawSample>,
    pub vocab: GlossVocabulary,
}

/// The first `n_train` generated samples train, the next `n_dev` are dev.
pub fn toy_data(cfg: &ExperimentConfig) -> Result<ToyData> {
    if cfg.n_train == 0 || cfg.n_dev == 0 {
        return Err(Error::Config("n_train and n_dev must be positive".into()));
    }
    let mut all = gen_dataset(&cfg.synth, cfg.n_train + cfg.n_dev)?;
    let dev = all.split_off(cfg.n_train);
    Ok(ToyData {
        train: all,
        dev,
        vocab: synth_vocabulary(cfg.synth.vocab_size),
    })
}

/// Trains one model and returns its best dev WER.
pub fn run_one(data: &ToyData, encoder: &IigaConfig, train: &TrainConfig) -> Result<f64> {
    let model = ModelConfig {
        input_width: data.train[0].frame_width(),
        num_classes: data.vocab.num_classes(),
        encoder: encoder.clone(),
    };
    let mut trainer = Trainer::new(model, train.clone())?;
    let best = trainer.fit(&data.train, &data.dev, &data.vocab, |log| info!("{}", log.to_line()))?;
    best.best_dev_wer.ok_or(Error::EmptyEpoch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerRow {
    pub label: String,
    /// One entry per seed, in seed order.
    pub wers: Vec<f64>,
    pub best: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<WerRow>,
}

impl WerTable {
    pub fn row(&self, label: &str) -> Option<&WerRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12}", "setting");
        for s in &self.seeds {
            let _ = write!(out, "  {:>8}", format!("seed{s}"));
        }
        out.push_str(&format!("  {:>8}\n", "best"));
        for r in &self.rows {
            let _ = write!(out, "{:<12}", r.label);
            for w in &r.wers {
                let _ = write!(out, "  {w:>8.4}");
            }
            let _ = writeln!(out, "  {:>8.4}", r.best);
        }
        out
    }
}

fn grid(cfg: &ExperimentConfig, seeds: &[u64], settings: Vec<(String, IigaConfig)>) -> Result<WerTable> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let data = toy_data(cfg)?;
    let mut rows = Vec::with_capacity(settings.len());
    for (label, encoder) in settings {
        let mut wers = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let train = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let wer = run_one(&data, &encoder, &train)?;
            info!("{label} seed {seed}: best dev WER {wer:.4}");
            wers.push(wer);
        }
        let best = wers.iter().copied().fold(f64::INFINITY, f64::min);
        rows.push(WerRow { label, wers, best });
    }
    Ok(WerTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

/// Vanilla, intra and intra+inter encoders, each trained once per seed.
pub fn ablation(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<WerTable> {
    let settings = [AttentionMode::Vanilla, AttentionMode::Intra, AttentionMode::IntraInter]
        .into_iter()
        .map(|mode| {
            (
                mode.to_string(),
                IigaConfig {
                    mode,
                    ..cfg.encoder.clone()
                },
            )
        })
        .collect();
    grid(cfg, seeds, settings)
}

/// One row per chunk size `W`, with stride and relative-bias radius set to `W`.
pub fn sweep_chunk(cfg: &ExperimentConfig, sizes: &[usize], seeds: &[u64]) -> Result<WerTable> {
    if sizes.is_empty() {
        return Err(Error::Config("at least one chunk size is required".into()));
    }
    let settings = sizes
        .iter()
        .map(|&w| {
            (
                format!("W={w}"),
                IigaConfig {
                    chunk_size: w,
                    stride: w,
                    rel_clip: w,
                    ..cfg.encoder.clone()
                },
            )
        })
        .collect();
    grid(cfg, seeds, settings)
}
