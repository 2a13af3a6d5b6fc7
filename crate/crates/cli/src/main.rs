use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use iiga::attention::AttentionMode;
use iiga::bench::{bench_attention, BenchConfig};
use iiga::ctc::GlossVocabulary;
use iiga::dataio::{
    mask_sample, read_dataset, read_hypotheses, read_masks, read_records, read_vocabulary, write_dataset,
    write_hypotheses, write_vocabulary, HypothesisLine, RawSample,
};
use iiga::experiments::{sweep_chunk, toy_data, ExperimentConfig};
use iiga::metrics::{edit_ops, wer_from_counts, EditCounts};
use iiga::model::ModelConfig;
use iiga::trainer::{evaluate, Checkpoint, ModelRecognizer, Trainer};
use iiga::verify::{ctc_oracle_suite, gradcheck_suites};

#[derive(Parser)]
#[command(name = "iiga", version, about = "Chunked gloss-attention sequence recognizer")]
struct Cli {
    /// Seed for data generation, initialization and training randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config with optional [synth], [encoder] and [train] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: train.jsonl, dev.jsonl and vocab.txt.
    Synth(SynthArgs),
    /// Train a model; writes best.ckpt.json, last.ckpt.json and train.log.
    Train(TrainArgs),
    /// Corpus WER of a checkpoint, or of a hypothesis file, against a dataset.
    Eval(EvalArgs),
    /// Decode a dataset into an `id<TAB>glosses` hypothesis file.
    Decode(DecodeArgs),
    /// Finite-difference gradient checks of every op and the full model.
    Gradcheck,
    /// Compare the CTC forward recursion against path enumeration.
    Oracle(OracleArgs),
    /// FLOP counts and wall-clock timings of the attention modes.
    Bench(BenchArgs),
    /// Train once per chunk size and print the dev WER table.
    SweepChunk(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_dev: Option<usize>,
}

#[derive(Args)]
struct ModelOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// vanilla, intra or intra+inter.
    #[arg(long)]
    mode: Option<AttentionMode>,
    #[arg(long)]
    chunk_size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// JSONL of `{"id", "mask"}` segmentation masks applied before training.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[command(flatten)]
    overrides: ModelOverrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference dataset (JSONL).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "hyp")]
    ckpt: Option<PathBuf>,
    /// Hypotheses as a TSV or dataset JSONL; scored without a model.
    #[arg(long, conflicts_with = "ckpt")]
    hyp: Option<PathBuf>,
    #[arg(long)]
    masks: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    masks: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 200)]
    instances: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Time the single-precision path instead of f64.
    #[arg(long)]
    f32: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "4,8,12,24")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
}

enum Failure {
    Validation(String),
    Numeric(String),
}

impl From<iiga::Error> for Failure {
    fn from(e: iiga::Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Validation(format!("{}: {e}", path.display()))
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            toml::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &ModelOverrides) {
    if let Some(v) = o.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = o.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = o.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = o.mode {
        cfg.encoder.mode = v;
    }
    if let Some(v) = o.chunk_size {
        cfg.encoder.chunk_size = v;
        cfg.encoder.stride = v;
        cfg.encoder.rel_clip = v;
    }
}

fn require_out(cli: &Cli) -> CliResult<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Failure::Validation("--out is required for this subcommand".into()))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Validation(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn load_samples(path: &Path, vocab: &GlossVocabulary, masks: Option<&Path>) -> CliResult<Vec<RawSample>> {
    let samples = read_dataset(path, vocab)?;
    let Some(masks) = masks else {
        return Ok(samples);
    };
    let masks: HashMap<_, _> = read_masks(masks)?;
    Ok(samples
        .iter()
        .map(|s| match masks.get(&s.id) {
            Some(m) => mask_sample(s, m),
            None => Ok(s.clone()),
        })
        .collect::<iiga::Result<_>>()?)
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> CliResult {
    let mut cfg = load_config(cli)?;
    cfg.n_train = args.n_train.unwrap_or(cfg.n_train);
    cfg.n_dev = args.n_dev.unwrap_or(cfg.n_dev);
    let dir = require_out(cli)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let data = toy_data(&cfg)?;
    write_dataset(dir.join("train.jsonl"), &data.train, &data.vocab)?;
    write_dataset(dir.join("dev.jsonl"), &data.dev, &data.vocab)?;
    write_vocabulary(dir.join("vocab.txt"), &data.vocab)?;
    println!(
        "wrote {} train / {} dev samples, {} glosses to {}",
        data.train.len(),
        data.dev.len(),
        data.vocab.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> CliResult {
    let mut cfg = load_config(cli)?;
    apply_overrides(&mut cfg, &args.overrides);
    let dir = require_out(cli)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let vocab = read_vocabulary(&args.vocab)?;
    let train = load_samples(&args.train, &vocab, args.masks.as_deref())?;
    let dev = load_samples(&args.dev, &vocab, args.masks.as_deref())?;
    let first = train
        .first()
        .ok_or_else(|| Failure::Validation("training set is empty".into()))?;
    let model = ModelConfig {
        input_width: first.frame_width(),
        num_classes: vocab.num_classes(),
        encoder: cfg.encoder.clone(),
    };
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let log_path = dir.join("train.log");
    let mut log = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log_err = None;
    let best = trainer.fit(&train, &dev, &vocab, |entry| {
        let line = entry.to_line();
        println!("{line}\t{:.3}s", entry.wall_seconds);
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(io_err(&log_path, e));
    }
    best.save(dir.join("best.ckpt.json"))?;
    trainer.checkpoint(&vocab).save(dir.join("last.ckpt.json"))?;
    println!(
        "best dev WER {:.4} at epoch {}",
        best.best_dev_wer.unwrap_or(f64::NAN),
        best.epoch
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    wer: f64,
    substitutions: usize,
    deletions: usize,
    insertions: usize,
    reference_glosses: usize,
}

fn report_wer(cli: &Cli, edits: EditCounts, ref_len: usize) -> CliResult {
    let wer = wer_from_counts(edits, ref_len)?;
    println!(
        "WER {wer:.3} (sub {} del {} ins {} / {} reference glosses)",
        edits.subs, edits.dels, edits.ins, ref_len
    );
    if let Some(out) = &cli.out {
        write_json(
            out,
            &EvalSummary {
                wer,
                substitutions: edits.subs,
                deletions: edits.dels,
                insertions: edits.ins,
                reference_glosses: ref_len,
            },
        )?;
    }
    Ok(())
}

/// A hypothesis file is either a dataset JSONL or `id<TAB>glosses` lines.
fn read_any_hypotheses(path: &Path) -> CliResult<Vec<HypothesisLine>> {
    let is_json = fs::read_to_string(path)
        .map_err(|e| io_err(path, e))?
        .trim_start()
        .starts_with('{');
    if is_json {
        Ok(read_records(path)?
            .into_iter()
            .map(|r| HypothesisLine {
                id: r.id,
                glosses: r.glosses,
            })
            .collect())
    } else {
        Ok(read_hypotheses(path)?)
    }
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> CliResult {
    if let Some(hyp_path) = &args.hyp {
        let refs = read_records(&args.data)?;
        let hyps: HashMap<String, Vec<String>> = read_any_hypotheses(hyp_path)?
            .into_iter()
            .map(|h| (h.id, h.glosses))
            .collect();
        let mut edits = EditCounts::default();
        let mut ref_len = 0;
        for r in &refs {
            let hyp = hyps
                .get(&r.id)
                .ok_or_else(|| Failure::Validation(format!("no hypothesis for sample `{}`", r.id)))?;
            edits = edits + edit_ops(&r.glosses, hyp);
            ref_len += r.glosses.len();
        }
        return report_wer(cli, edits, ref_len);
    }
    let ckpt_path = args.ckpt.as_ref().expect("clap requires --ckpt without --hyp");
    let ckpt = Checkpoint::load(ckpt_path)?;
    let vocab = ckpt.vocabulary()?;
    let (model, params, _) = ckpt.restore()?;
    let data = load_samples(&args.data, &vocab, args.masks.as_deref())?;
    let rec = ModelRecognizer {
        model: &model,
        params: &params,
    };
    let result = evaluate(&rec, &data, ckpt.train_config.drop_ratio)?;
    let ref_len = data.iter().map(|s| s.glosses.len()).sum();
    report_wer(cli, result.edits, ref_len)
}

fn cmd_decode(cli: &Cli, args: &DecodeArgs) -> CliResult {
    let out = require_out(cli)?;
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let vocab = ckpt.vocabulary()?;
    let (model, params, _) = ckpt.restore()?;
    let data = load_samples(&args.data, &vocab, args.masks.as_deref())?;
    let rec = ModelRecognizer {
        model: &model,
        params: &params,
    };
    let result = evaluate(&rec, &data, ckpt.train_config.drop_ratio)?;
    let hyps: Vec<HypothesisLine> = result
        .decodes
        .iter()
        .map(|(id, seq)| HypothesisLine {
            id: id.clone(),
            glosses: vocab.decode(seq),
        })
        .collect();
    write_hypotheses(out, &hyps)?;
    println!(
        "decoded {} samples to {} (WER {:.3})",
        hyps.len(),
        out.display(),
        result.wer
    );
    Ok(())
}

fn cmd_gradcheck(cli: &Cli) -> CliResult {
    let suites = gradcheck_suites(cli.seed.unwrap_or(0))?;
    for s in &suites {
        println!(
            "{:<36} max_rel_error {:.3e} over {:>5} entries  {}",
            s.name,
            s.max_rel_error,
            s.entries,
            if s.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(out) = &cli.out {
        write_json(out, &suites)?;
    }
    match suites.iter().filter(|s| !s.passed).count() {
        0 => Ok(()),
        n => Err(Failure::Numeric(format!("{n} gradient suite(s) exceed tolerance"))),
    }
}

fn cmd_oracle(cli: &Cli, args: &OracleArgs) -> CliResult {
    let report = ctc_oracle_suite(args.instances, cli.seed.unwrap_or(0))?;
    println!(
        "{} instances, max |exp(-loss) - brute force| = {:.3e}  {}",
        report.instances,
        report.max_abs_diff,
        if report.passed { "ok" } else { "FAIL" }
    );
    if let Some(out) = &cli.out {
        write_json(out, &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Numeric("CTC oracle mismatch".into()))
    }
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> CliResult {
    let mut cfg = BenchConfig::default();
    if let Some(sizes) = &args.sizes {
        cfg.sizes = sizes.clone();
    }
    if let Some(r) = args.repetitions {
        cfg.repetitions = r;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let report = if args.f32 {
        bench_attention::<f32>(&cfg)?
    } else {
        bench_attention::<f64>(&cfg)?
    };
    print!("{}", report.to_table());
    if let Some(out) = &cli.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> CliResult {
    let mut cfg = load_config(cli)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let seeds = args.seeds.clone().unwrap_or_else(|| vec![cfg.train.seed]);
    let table = sweep_chunk(&cfg, &args.sizes, &seeds)?;
    print!("{}", table.to_table());
    if let Some(out) = &cli.out {
        write_json(out, &table)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Decode(a) => cmd_decode(cli, a),
        Command::Gradcheck => cmd_gradcheck(cli),
        Command::Oracle(a) => cmd_oracle(cli, a),
        Command::Bench(a) => cmd_bench(cli, a),
        Command::SweepChunk(a) => cmd_sweep(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(2)
        }
    }
}
