use std::path::Path;
use std::process::{Command, Output};

fn iiga(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iiga"))
        .args(args)
        .output()
        .expect("spawn iiga")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(iiga(&["--help"]).status.code(), Some(0));
    assert_eq!(iiga(&["--version"]).status.code(), Some(0));
    assert_eq!(iiga(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(iiga(&["train"]).status.code(), Some(1));
    assert_eq!(
        iiga(&["bench", "--sizes", "48", "--repetitions", "3"]).status.code(),
        Some(1)
    );
}

#[test]
fn synth_train_decode_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let o = iiga(&[
        "synth",
        "--seed",
        "3",
        "--n-train",
        "8",
        "--n-dev",
        "3",
        "--out",
        s(&data),
    ]);
    assert!(o.status.success(), "{o:?}");
    for f in ["train.jsonl", "dev.jsonl", "vocab.txt"] {
        assert!(data.join(f).is_file(), "{f}");
    }

    let (train, dev, vocab) = (data.join("train.jsonl"), data.join("dev.jsonl"), data.join("vocab.txt"));
    let o = iiga(&[
        "train",
        "--seed",
        "3",
        "--epochs",
        "2",
        "--train",
        s(&train),
        "--dev",
        s(&dev),
        "--vocab",
        s(&vocab),
        "--out",
        s(&run),
    ]);
    assert!(o.status.success(), "{o:?}");
    let log = std::fs::read_to_string(run.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().all(|l| l.split('\t').count() == 4), "{log}");
    assert!(stdout(&o).contains("best dev WER"));

    let ckpt = run.join("best.ckpt.json");
    let summary = dir.path().join("eval.json");
    let o = iiga(&["eval", "--data", s(&dev), "--ckpt", s(&ckpt), "--out", s(&summary)]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("WER "));
    let by_model: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();

    let hyp = dir.path().join("hyp.tsv");
    let o = iiga(&["decode", "--data", s(&dev), "--ckpt", s(&ckpt), "--out", s(&hyp)]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(std::fs::read_to_string(&hyp).unwrap().lines().count(), 3);

    let o = iiga(&["eval", "--data", s(&dev), "--hyp", s(&hyp), "--out", s(&summary)]);
    assert!(o.status.success(), "{o:?}");
    let by_hyp: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(by_model, by_hyp);

    // References scored against themselves.
    let o = iiga(&["eval", "--data", s(&dev), "--hyp", s(&dev)]);
    assert!(stdout(&o).starts_with("WER 0.000"), "{}", stdout(&o));
}

#[test]
fn invalid_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nno_such_key = 1\n").unwrap();
    let o = iiga(&["synth", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));

    let missing = dir.path().join("missing.jsonl");
    let o = iiga(&["eval", "--data", s(&missing), "--hyp", s(&missing)]);
    assert_eq!(o.status.code(), Some(1));

    let o = iiga(&["synth", "--n-train", "2"]);
    assert_eq!(o.status.code(), Some(1), "--out is required");
}

#[test]
fn config_file_is_applied() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "n_train = 4\nn_dev = 2\n\n[synth]\nvocab_size = 5\n\n[encoder]\nmode = \"intra+inter\"\nchunk_size = 8\n",
    )
    .unwrap();
    let o = iiga(&["synth", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.status.success(), "{o:?}");
    let vocab = std::fs::read_to_string(dir.path().join("vocab.txt")).unwrap();
    assert_eq!(vocab.lines().count(), 5);
    let train = std::fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 4);
}

#[test]
fn numeric_checks_report_success() {
    let o = iiga(&["gradcheck"]);
    assert!(o.status.success(), "{o:?}");
    assert!(!stdout(&o).contains("FAIL"));
    let o = iiga(&["oracle", "--instances", "50"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("50 instances"));
}

#[test]
fn bench_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    let o = iiga(&[
        "bench",
        "--sizes",
        "24,48",
        "--repetitions",
        "20",
        "--f32",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{o:?}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["precision"], "f32");
    assert_eq!(report["sizes"].as_array().unwrap().len(), 2);
}
