use arnn_core::corpus::{Dialogue, NUM_RESERVED};
use arnn_core::models::{write_checkpoint, DialogueExample, Model, ModelKind};
use arnn_core::numeric::Parameters;
use arnn_core::trainer::{dev_perplexity, pretrain_finetune, train, train_from, AdamConfig, TrainConfig};
use arnn_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: usize = 30;

fn dialogue(rng: &mut ChaCha8Rng, turns: usize, len: usize) -> DialogueExample {
    let turns: Vec<Vec<usize>> = (0..turns)
        .map(|_| (0..len).map(|_| rng.gen_range(NUM_RESERVED..V)).collect())
        .collect();
    DialogueExample::new(&Dialogue::from_turns(turns))
        .unwrap()
        .with_theta(vec![0.25, 0.75])
}

fn corpus(seed: u64, n: usize) -> Vec<DialogueExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| dialogue(&mut rng, 3, 4)).collect()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        hidden: 8,
        embed: 6,
        max_epochs: 3,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn single_dialogue_is_memorised_by_every_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let one = vec![dialogue(&mut rng, 4, 5)];
    let config = TrainConfig {
        hidden: 16,
        embed: 8,
        adam: AdamConfig {
            lr: 0.02,
            ..Default::default()
        },
        max_epochs: 200,
        patience: 200,
        ..Default::default()
    };
    for kind in ModelKind::ALL {
        let out = train(kind, V, 2, &one, &one, &config).unwrap();
        let ppl = dev_perplexity(&out.model, &one).unwrap();
        let losses: Vec<f64> = out.log.iter().map(|e| e.train_loss).collect();
        let down = losses.windows(2).filter(|w| w[1] < w[0]).count();
        let frac = down as f64 / (losses.len() - 1) as f64;
        eprintln!("{kind}: ppl {ppl:.4}, loss decreased in {:.1}% of intervals", 100.0 * frac);
        assert!(ppl < 1.5, "{kind}: {ppl}");
        assert!(frac >= 0.95, "{kind}: {frac}");
    }
}

#[test]
fn zero_learning_rate_is_a_null_update() {
    let train_set = corpus(1, 6);
    let mut config = small_config();
    config.adam.lr = 0.0;
    config.max_epochs = 1;
    for kind in ModelKind::ALL {
        let init = Model::with_scale(kind, config.dims(V, 2), config.seed, config.init_scale).unwrap();
        let out = train(kind, V, 2, &train_set, &train_set, &config).unwrap();
        assert_eq!(out.model, init, "{kind}");
    }
}

#[test]
fn training_is_deterministic() {
    let train_set = corpus(2, 8);
    let dev = corpus(3, 3);
    let config = small_config();
    let ckpt = |m: &Model| {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, m, "h").unwrap();
        buf
    };
    let a = train(ModelKind::ARnn, V, 0, &train_set, &dev, &config).unwrap();
    let b = train(ModelKind::ARnn, V, 0, &train_set, &dev, &config).unwrap();
    assert_eq!(ckpt(&a.model), ckpt(&b.model));
    assert_eq!(a.log, b.log);
    let mut other = config.clone();
    other.seed = 12;
    let c = train(ModelKind::ARnn, V, 0, &train_set, &dev, &other).unwrap();
    assert_ne!(ckpt(&a.model), ckpt(&c.model));
}

#[test]
fn best_checkpoint_and_early_stopping() {
    let train_set = corpus(4, 10);
    let dev = corpus(5, 4);
    let mut config = small_config();
    config.adam.lr = 0.05;
    config.max_epochs = 60;
    config.patience = 2;
    let out = train(ModelKind::Rnn, V, 0, &train_set, &dev, &config).unwrap();
    let best = out.best_so_far();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(*best.last().unwrap(), out.best_dev_ppl);
    assert!((dev_perplexity(&out.model, &dev).unwrap() - out.best_dev_ppl).abs() < 1e-12);
    for (e, b) in out.log.iter().zip(&best) {
        assert_eq!(e.best, e.dev_ppl == *b && (e.epoch == 1 || e.dev_ppl < best[e.epoch - 2]));
    }
    // Random dev data: the model overfits and patience ends the run early.
    assert!(out.log.len() < 60);
    let tail = &out.log[out.log.len() - 2..];
    assert!(tail.iter().all(|e| !e.best));
    assert_eq!(out.log.last().unwrap().seen, out.log.len() * train_set.len());
}

#[test]
fn eval_interval_spaces_the_log() {
    let train_set = corpus(6, 4);
    let mut config = small_config();
    config.max_epochs = 7;
    config.eval_interval = 3;
    config.patience = 10;
    let out = train(ModelKind::Seq2Seq, V, 0, &train_set, &train_set, &config).unwrap();
    let epochs: Vec<usize> = out.log.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, vec![3, 6, 7]);
}

#[test]
fn empty_pretrain_phase_is_plain_training() {
    let train_set = corpus(7, 6);
    let dev = corpus(8, 2);
    let config = small_config();
    let plain = train(ModelKind::TaRnn, V, 2, &train_set, &dev, &config).unwrap();
    let (ft, phase1) =
        pretrain_finetune(ModelKind::TaRnn, V, 2, (&[], &[]), (&train_set, &dev), &config, &mut |_| {})
            .unwrap();
    assert!(phase1.is_none());
    assert_eq!(ft.model, plain.model);
    assert_eq!(ft.log, plain.log);
}

#[test]
fn pretraining_runs_two_phases() {
    let pre = corpus(9, 10);
    let train_set = corpus(10, 4);
    let dev = corpus(11, 2);
    let config = small_config();
    let mut lines = 0;
    let (ft, phase1) = pretrain_finetune(
        ModelKind::ARnn,
        V,
        0,
        (&pre, &[]),
        (&train_set, &dev),
        &config,
        &mut |_| lines += 1,
    )
    .unwrap();
    let phase1 = phase1.unwrap();
    assert_eq!(lines, phase1.log.len() + ft.log.len());
    assert_ne!(ft.model, phase1.model);
}

#[test]
fn dimension_mismatch_between_phases_is_an_error() {
    let data = corpus(12, 3);
    let config = small_config();
    let other = Model::new(ModelKind::Rnn, config.dims(V, 0).with_topics(0), 1).unwrap();
    let mut wrong = config.clone();
    wrong.hidden = 9;
    assert!(matches!(
        train_from(other, &data, &data, &wrong, &mut |_| {}),
        Err(Error::Shape(_))
    ));
}

#[test]
fn empty_splits_are_rejected() {
    let data = corpus(13, 3);
    let config = small_config();
    assert!(train(ModelKind::Rnn, V, 0, &[], &data, &config).is_err());
    assert!(train(ModelKind::Rnn, V, 0, &data, &[], &config).is_err());
}

#[test]
fn diverging_training_names_the_sequence() {
    let data = corpus(14, 3);
    let mut config = small_config();
    config.init_scale = 1e154;
    let err = train(ModelKind::Rnn, V, 0, &data, &data, &config).unwrap_err();
    assert!(err.is_numerical(), "{err}");
}

#[test]
fn trained_parameters_stay_finite() {
    let data = corpus(15, 5);
    let config = small_config();
    for kind in ModelKind::ALL {
        let out = train(kind, V, 2, &data, &data, &config).unwrap();
        assert!(out.model.params.is_finite());
    }
}
