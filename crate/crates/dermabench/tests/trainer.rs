use std::path::Path;

use candle_core::Device;
use dermabench::model::{build_model, load_backbone, load_checkpoint, ModelHandle, WeightsSpec};
use dermabench::synthetic::{synthetic_bundle, Content, SyntheticSpec};
use dermabench::trainer::{evaluate, train, TrainConfig};
use dermabench_core::{BackboneKind, ClassWeights, DatasetBundle, ModelName};

fn data(side: usize, counts: [usize; 3]) -> DatasetBundle {
    synthetic_bundle(&SyntheticSpec {
        side,
        counts,
        seed: 11,
        content: Content::Lesions,
    })
    .unwrap()
}

fn model(name: ModelName, side: usize) -> ModelHandle {
    let config = name.config();
    let backbone = match config.backbone {
        BackboneKind::None => None,
        kind => Some(load_backbone(kind, &WeightsSpec::Synthetic { seed: 3 }, Path::new("."), &Device::Cpu).unwrap()),
    };
    build_model(&config, side, 5, backbone).unwrap()
}

fn config(lr: f64, epochs: usize, patience: u32) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        batch_size: 16,
        max_epochs: epochs,
        patience,
        seed: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_descends_on_a_learnable_toy_problem() {
    let b = data(8, [140, 28, 28]);
    let mut m = model(ModelName::Sm, 8);
    let dir = tempfile::tempdir().unwrap();
    let run = train(&mut m, &b, &config(3e-3, 6, 10), dir.path()).unwrap();
    let h = &run.history;
    assert_eq!(h.len(), 6);
    assert!(h.last().unwrap().train_loss < 0.8 * h[0].train_loss, "{h:?}");
    assert!(h.iter().all(|r| r.train_loss.is_finite() && r.validation_loss.is_finite()));
}

#[test]
fn zero_learning_rate_stops_after_patience_and_restores_epoch_one() {
    let b = data(8, [56, 14, 14]);
    let mut m = model(ModelName::Sm, 8);
    let before = m.head_digest().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = train(&mut m, &b, &config(0.0, 20, 2), dir.path()).unwrap();
    assert_eq!(run.history.len(), 3);
    assert!(run.stopped_early);
    assert_eq!(run.best_epoch, 1);
    let first = run.history[0].validation_loss;
    assert!(run.history.iter().all(|r| r.validation_loss == first));
    assert_eq!(m.head_digest().unwrap(), before);
}

#[test]
fn restored_checkpoint_reproduces_the_best_validation_loss() {
    let b = data(8, [84, 21, 21]);
    let mut m = model(ModelName::Sm, 8);
    let dir = tempfile::tempdir().unwrap();
    let run = train(&mut m, &b, &config(1e-3, 4, 10), dir.path()).unwrap();
    let best = run.best().validation_loss;

    let in_memory = evaluate(&mut m, b.validation(), None).unwrap().loss;
    assert!((in_memory - best).abs() <= 1e-5, "{in_memory} vs {best}");

    let mut fresh = model(ModelName::Sm, 8);
    load_checkpoint(&mut fresh, &run.checkpoint_path).unwrap();
    let reloaded = evaluate(&mut fresh, b.validation(), None).unwrap().loss;
    assert!((reloaded - best).abs() <= 1e-5, "{reloaded} vs {best}");
}

#[test]
fn unit_class_weights_match_unweighted_training() {
    let b = data(8, [56, 14, 14]);
    let dir = tempfile::tempdir().unwrap();
    let mut a = model(ModelName::Sm, 8);
    let plain = train(&mut a, &b, &config(1e-3, 2, 10), &dir.path().join("a")).unwrap();
    let mut w = model(ModelName::Sm, 8);
    let weighted_config = TrainConfig {
        class_weights: Some(ClassWeights::uniform()),
        ..config(1e-3, 2, 10)
    };
    let weighted = train(&mut w, &b, &weighted_config, &dir.path().join("b")).unwrap();
    assert_eq!(plain.history, weighted.history);
    assert_eq!(a.head_digest().unwrap(), w.head_digest().unwrap());
}

#[test]
fn training_is_reproducible_for_a_seed() {
    let b = data(8, [56, 14, 14]);
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let mut m = model(ModelName::Sm, 8);
        train(&mut m, &b, &config(1e-3, 2, 10), &dir.path().join(sub)).unwrap()
    };
    assert_eq!(run("x").history, run("y").history);
}

#[test]
fn backbone_stays_frozen_while_the_head_moves() {
    let b = data(32, [28, 7, 7]);
    let mut m = model(ModelName::Effv3E, 32);
    let frozen = m.frozen_digest().unwrap();
    let head = m.head_digest().unwrap();
    let dir = tempfile::tempdir().unwrap();
    train(&mut m, &b, &config(1e-3, 2, 10), dir.path()).unwrap();
    assert_eq!(m.frozen_digest().unwrap(), frozen);
    assert_ne!(m.head_digest().unwrap(), head);
}

#[test]
fn mismatched_resolution_is_refused() {
    let b = data(8, [28, 7, 7]);
    let mut m = model(ModelName::Sm, 12);
    let dir = tempfile::tempdir().unwrap();
    let err = train(&mut m, &b, &config(1e-3, 1, 1), dir.path()).unwrap_err();
    assert!(err.to_string().contains("8×8"), "{err}");
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(config(0.0, 1, 1).validate().is_err());
    assert!(TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        max_epochs: 0,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
}
