use iiga::attention::IigaConfig;
use iiga::ctc::{ctc_loss, GlossSequence};
use iiga::dataio::{gen_dataset, synth_vocabulary, RawSample, SynthConfig};
use iiga::model::ModelConfig;
use iiga::numcore::Matrix;
use iiga::trainer::{Checkpoint, TrainConfig, Trainer};

fn model_config(width: usize) -> ModelConfig {
    ModelConfig {
        input_width: width,
        num_classes: 11,
        encoder: IigaConfig::toy(),
    }
}

fn small_data(n: usize) -> Vec<RawSample> {
    gen_dataset(&SynthConfig::default(), n).unwrap()
}

#[test]
fn overfits_a_single_sample() {
    let data = small_data(1);
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 200,
        dropout: 0.0,
        drop_ratio: 0.0,
        milestones: vec![],
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(model_config(data[0].frame_width()), cfg).unwrap();
    for _ in 0..200 {
        t.train_epoch(&data).unwrap();
    }
    let lp = t
        .model
        .log_probs(&t.params, &data[0].frames, data[0].num_frames())
        .unwrap();
    let loss = ctc_loss(&lp, &data[0].glosses).unwrap();
    assert!(loss < 0.1, "final loss {loss}");
}

#[test]
fn loss_decreases_over_first_epochs() {
    let data = small_data(300);
    let mut t = Trainer::new(model_config(data[0].frame_width()), TrainConfig::default()).unwrap();
    let first = t.train_epoch(&data).unwrap().mean_loss;
    let mut last = first;
    for _ in 1..5 {
        last = t.train_epoch(&data).unwrap().mean_loss;
    }
    assert!(last < first, "epoch 5 {last} vs epoch 1 {first}");
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let data = small_data(4);
    let cfg = TrainConfig {
        lr: 0.0,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(model_config(data[0].frame_width()), cfg).unwrap();
    let before: Vec<Matrix<f64>> = t.params.iter().map(|p| p.value.clone()).collect();
    t.train_epoch(&data).unwrap();
    for (p, b) in t.params.iter().zip(&before) {
        assert_eq!(&p.value, b, "{}", p.name);
    }
}

#[test]
fn infeasible_samples_are_skipped() {
    let mut data = small_data(3);
    // Four distinct glosses in four frames: any drop makes it unalignable.
    data.push(RawSample {
        id: "tiny".into(),
        frames: Matrix::zeros(4, data[0].frame_width()),
        glosses: GlossSequence::new(vec![1, 2, 3, 4]).unwrap(),
    });
    let mut t = Trainer::new(model_config(data[0].frame_width()), TrainConfig::default()).unwrap();
    let s = t.train_epoch(&data).unwrap();
    assert_eq!((s.used, s.skipped), (3, 1));
    assert!(t.train_epoch(&data[3..]).is_err());
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let data = small_data(24);
    let (train, dev) = data.split_at(20);
    let vocab = synth_vocabulary(10);
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let run = || {
        let mut t = Trainer::new(model_config(train[0].frame_width()), cfg.clone()).unwrap();
        let mut lines = Vec::new();
        let best = t
            .fit(train, dev, &vocab, |l| lines.push((l.epoch, l.mean_loss, l.dev_wer)))
            .unwrap();
        (best, t.checkpoint(&vocab), lines)
    };
    let (a_best, a_last, a_log) = run();
    let (b_best, b_last, b_log) = run();
    assert_eq!(a_best, b_best);
    assert_eq!(a_last, b_last);
    assert_eq!(a_log, b_log);

    let other = Trainer::new(model_config(train[0].frame_width()), TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(other.checkpoint(&vocab).params, a_last.params);
}

#[test]
fn checkpoint_round_trips_bit_exactly_and_resumes() {
    let data = small_data(12);
    let (train, dev) = data.split_at(10);
    let vocab = synth_vocabulary(10);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(model_config(train[0].frame_width()), cfg).unwrap();
    t.fit(train, dev, &vocab, |_| {}).unwrap();
    let ckpt = t.checkpoint(&vocab);

    let dir = tempdir();
    let path = dir.join("c.json");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    assert_eq!(loaded.vocabulary().unwrap(), vocab);

    let resumed = Trainer::from_checkpoint(&loaded).unwrap();
    assert_eq!(resumed.epoch, 1);
    assert_eq!(resumed.opt, t.opt);
    for (a, b) in resumed.params.iter().zip(t.params.iter()) {
        assert_eq!(a.value, b.value);
    }
    let e1 = t.evaluate(dev).unwrap();
    let e2 = resumed.evaluate(dev).unwrap();
    assert_eq!(e1, e2);

    let mut bad = ckpt.clone();
    bad.format = "other".into();
    bad.save(&path).unwrap();
    assert!(Checkpoint::load(&path).is_err());
    let mut missing = ckpt;
    missing.params.pop();
    assert!(missing.restore().is_err());
}

fn tempdir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("iiga-training-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
