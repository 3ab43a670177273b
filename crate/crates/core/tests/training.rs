mod common;

use common::{days, fit_normalizer, tiny_arch, tiny_synth};
use spreadcast::model::{generator_forward, init_params, ForwardMode, ModelParams};
use spreadcast::numerics::{Eager, RngStream, Tensor};
use spreadcast::training::{gan_train_step, train, GanState, TrainConfig, TrainData, TrainOutcome};
use spreadcast::Error;

const SHAPE: [usize; 4] = [4, 8, 16, 1];

fn batch(n: usize, phase: f32) -> Tensor<f32> {
    Tensor::from_fn([n, 4, 8, 16, 1], |i| (i as f32 * 0.37 + phase).sin() * 0.8)
}

fn fresh_state(seed: u64, cfg: &TrainConfig) -> GanState {
    let params = init_params(&tiny_arch(SHAPE), &RngStream::new(seed, 0)).unwrap();
    GanState::new(params, cfg.adam())
}

#[test]
fn fake_equal_to_truth_leaves_only_the_adversarial_term() {
    let arch = tiny_arch(SHAPE);
    let cfg = TrainConfig::default();
    let mut state = fresh_state(0, &cfg);
    let x = batch(2, 0.0);
    let rng = RngStream::new(5, 0);
    // the step runs the generator on the "gen" substream in training mode
    let (fake, _) = generator_forward(
        &mut Eager,
        &state.params,
        &arch,
        &x,
        ForwardMode::TRAIN,
        &rng.split_str("gen"),
    )
    .unwrap();
    let l = gan_train_step(&mut state, &arch, &x, &fake, &cfg, &rng).unwrap();
    assert_eq!(l.g_l1, 0.0);
    assert_eq!(l.g_total, l.g_adv);
}

#[test]
fn overfitting_one_sample_lowers_l1() {
    let arch = tiny_arch(SHAPE);
    let cfg = TrainConfig {
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let mut state = fresh_state(1, &cfg);
    let (x, y) = (batch(1, 0.0), batch(1, 1.3).map(|v| v.abs() - 0.5));
    let root = RngStream::new(2, 0);
    let l1: Vec<f32> = (0..50)
        .map(|k| {
            gan_train_step(&mut state, &arch, &x, &y, &cfg, &root.split(k))
                .unwrap()
                .g_l1
        })
        .collect();
    assert!(l1[49] < l1[0], "{} -> {}", l1[0], l1[49]);
    assert_eq!(state.gen_opt.step_count(), 50);
    assert_eq!(state.disc_opt.step_count(), 50);
}

#[test]
fn mismatched_batch_rejected() {
    let arch = tiny_arch(SHAPE);
    let cfg = TrainConfig::default();
    let mut state = fresh_state(0, &cfg);
    let err = gan_train_step(
        &mut state,
        &arch,
        &batch(1, 0.0),
        &batch(2, 0.0),
        &cfg,
        &RngStream::new(0, 0),
    );
    assert!(matches!(err, Err(Error::Shape { .. })));
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 3,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn run(
    train_days: &spreadcast::data::DatasetIndex,
    val_days: &spreadcast::data::DatasetIndex,
    cfg: &TrainConfig,
    dir: Option<&std::path::Path>,
) -> TrainOutcome {
    let source = tiny_synth();
    let data = TrainData {
        source: &source,
        train: train_days.clone(),
        val: val_days.clone(),
        normalizer: fit_normalizer(&source, train_days),
    };
    train(&data, &tiny_arch(SHAPE), cfg, dir).unwrap()
}

fn assert_same_weights(a: &ModelParams, b: &ModelParams) {
    assert_eq!(a.len(), b.len());
    for (name, t) in a {
        let u = &b[name];
        let same = t
            .data()
            .iter()
            .zip(u.data())
            .all(|(p, q)| p.to_bits() == q.to_bits());
        assert!(same, "{name} differs");
    }
}

#[test]
fn same_seed_gives_bitwise_identical_weights() {
    let (tr, va) = (days("2015-01-01", 7), days("2015-02-01", 2));
    let a = run(&tr, &va, &small_config(), None);
    let b = run(&tr, &va, &small_config(), None);
    assert_same_weights(&a.final_model.params, &b.final_model.params);
    assert_eq!(a.log.rows.len(), b.log.rows.len());
    for (p, q) in a.log.rows.iter().zip(&b.log.rows) {
        assert_eq!(
            (p.d_loss.to_bits(), p.g_adv.to_bits(), p.g_l1.to_bits()),
            (q.d_loss.to_bits(), q.g_adv.to_bits(), q.g_l1.to_bits())
        );
    }
    let c = run(
        &tr,
        &va,
        &TrainConfig {
            seed: 12,
            ..small_config()
        },
        None,
    );
    assert_ne!(a.final_model.params, c.final_model.params);
}

#[test]
fn validation_split_never_touches_the_weights() {
    let tr = days("2015-01-01", 7);
    let a = run(&tr, &days("2015-02-01", 3), &small_config(), None);
    let b = run(&tr, &days("2015-03-10", 2), &small_config(), None);
    let c = run(&tr, &Default::default(), &small_config(), None);
    assert_same_weights(&a.final_model.params, &b.final_model.params);
    assert_same_weights(&a.final_model.params, &c.final_model.params);
    assert_eq!(a.log.val_rmse.len(), 2);
    assert!(c.log.val_rmse.is_empty());
}

#[test]
fn telemetry_has_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let out = run(
        &days("2015-01-01", 7),
        &days("2015-02-01", 2),
        &cfg,
        Some(dir.path()),
    );
    // ceil(7 / 3) batches per epoch
    assert_eq!(out.log.rows.len(), cfg.epochs * 3);
    for (k, r) in out.log.rows.iter().enumerate() {
        assert_eq!(r.step, k as u64);
        assert_eq!(r.epoch, k / 3);
    }
    for name in ["epoch_001.spw", "epoch_002.spw", "best.spw", "best.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let best = out.log.val_rmse[out.best_epoch];
    assert!(out.log.val_rmse.iter().all(|&v| v >= best));

    let csv = dir.path().join("log.csv");
    out.log.write_csv(&csv).unwrap();
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "step,epoch,d_loss,g_adv,g_l1,wall_ms"
    );
    assert_eq!(text.lines().count(), 1 + out.log.rows.len());
}

#[test]
fn bad_inputs_rejected() {
    let source = tiny_synth();
    let tr = days("2015-01-01", 3);
    let data = TrainData {
        source: &source,
        train: tr.clone(),
        val: Default::default(),
        normalizer: fit_normalizer(&source, &tr),
    };
    let arch = tiny_arch(SHAPE);
    let zero = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&data, &arch, &zero, None),
        Err(Error::Config(_))
    ));
    let wrong = tiny_arch([4, 16, 16, 1]);
    assert!(matches!(
        train(&data, &wrong, &TrainConfig::default(), None),
        Err(Error::Shape { .. })
    ));
    let empty = TrainData {
        train: Default::default(),
        ..data
    };
    assert!(matches!(
        train(&empty, &arch, &TrainConfig::default(), None),
        Err(Error::Data(_))
    ));
}
