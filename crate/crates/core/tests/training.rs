//! End-to-end training behavior at a miniature scale.

use fctl_core::degrade::{DegradeKind, DegradeSpec};
use fctl_core::train::{
    build_dataset, evaluate_on, train_baseline_on, train_fctl_on, train_ideal_on, TrainConfig,
};

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        dataset_size: 10,
        batch_size: 4,
        degrade: DegradeSpec::new(DegradeKind::Fog, 0.6, 0),
        ..TrainConfig::default()
    }
}

#[test]
fn ideal_training_reduces_detection_loss() {
    let cfg = small_config();
    let dataset = build_dataset(&cfg).unwrap();
    let out = train_ideal_on(&cfg, &dataset).unwrap();
    assert_eq!(out.curve.len(), cfg.epochs);
    let first = out.curve.first().unwrap().det_loss;
    let last = out.curve.last().unwrap().det_loss;
    assert!(last < first, "no descent: {first} -> {last}");
    let m = evaluate_on(&out.params, None, &cfg, &dataset).unwrap();
    assert!(m.det_loss.is_finite() && (0.0..=1.0).contains(&m.f1));
}

#[test]
fn lambda_zero_fctl_is_bitwise_the_baseline() {
    let cfg = TrainConfig { lambda_fs: 0.0, ..small_config() };
    let dataset = build_dataset(&cfg).unwrap();
    let ideal = train_ideal_on(&cfg, &dataset).unwrap();
    let baseline = train_baseline_on(&cfg, &dataset).unwrap();
    let fctl = train_fctl_on(&ideal.params, &cfg, &dataset).unwrap();
    let b = baseline.params.flat();
    let f = fctl.params.flat();
    assert_eq!(b.len(), f.len());
    for (i, (x, y)) in b.iter().zip(f.iter()).enumerate() {
        assert_eq!(x.to_bits(), y.to_bits(), "weight {i} diverged: {x} vs {y}");
    }
    assert_eq!(baseline.steps, fctl.steps);
}

#[test]
fn static_model_stays_frozen_and_pairs_share_scenes() {
    let cfg = TrainConfig { epochs: 2, ..small_config() };
    let dataset = build_dataset(&cfg).unwrap();
    let ideal = train_ideal_on(&cfg, &dataset).unwrap();
    let before = ideal.params.flat();
    let out = train_fctl_on(&ideal.params, &cfg, &dataset).unwrap();
    let after = ideal.params.flat();
    assert!(before.iter().zip(after.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));

    // Every step draws the clean pyramid and the degraded image from the same
    // scene ids, and the epoch ratio handed to the loss follows the schedule.
    let n_train = dataset.train_ids.len();
    for step in &out.steps {
        assert!(step.scene_ids.iter().all(|&id| id < n_train));
        assert_eq!(step.delta, step.epoch as f64 / cfg.epochs as f64);
    }
    let total: usize = out.steps.iter().map(|s| s.scene_ids.len()).sum();
    assert_eq!(total, cfg.epochs * n_train);
}

#[test]
fn fctl_curve_reports_attenuation_schedule() {
    let cfg = TrainConfig { epochs: 4, ..small_config() };
    let dataset = build_dataset(&cfg).unwrap();
    let ideal = train_ideal_on(&cfg, &dataset).unwrap();
    let out = train_fctl_on(&ideal.params, &cfg, &dataset).unwrap();
    for (e, stats) in out.curve.iter().enumerate() {
        assert_eq!(stats.epoch, e);
        let delta = e as f64 / cfg.epochs as f64;
        let expect = (-cfg.eansdl.alpha * delta.powf(cfg.eansdl.beta)).exp();
        assert!((stats.attenuation - expect).abs() < 1e-12);
        assert!(stats.eansdl_term >= 0.0);
    }
    // delta = 0 at the first epoch: no attenuation yet.
    assert_eq!(out.curve[0].attenuation, 1.0);
}
