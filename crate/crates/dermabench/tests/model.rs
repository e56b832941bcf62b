use std::path::Path;

use candle_core::Device;
use dermabench::model::{build_model, describe_model, load_backbone, load_checkpoint, save_checkpoint, WeightsSpec};
use dermabench::synthetic::{synthetic_bundle, Content, SyntheticSpec};
use dermabench::Error;
use dermabench_core::zoo::layer_tags;
use dermabench_core::{BackboneKind, DatasetBundle, ModelName};

fn bundle(side: usize) -> DatasetBundle {
    synthetic_bundle(&SyntheticSpec {
        side,
        counts: [28, 7, 7],
        seed: 2,
        content: Content::Lesions,
    })
    .unwrap()
}

fn build(name: ModelName, side: usize, seed: u64) -> dermabench::model::ModelHandle {
    let config = name.config();
    let backbone = match config.backbone {
        BackboneKind::None => None,
        kind => Some(load_backbone(kind, &WeightsSpec::Synthetic { seed: 9 }, Path::new("."), &Device::Cpu).unwrap()),
    };
    build_model(&config, side, seed, backbone).unwrap()
}

#[test]
fn scratch_model_trains_every_parameter() {
    let m = build(ModelName::Sm, 16, 0);
    assert_eq!(m.trainable_params(), m.total_params());
    assert!(m.manifest().iter().all(|e| e.trainable));
    let listed: usize = m.manifest().iter().map(|e| e.params).sum();
    assert_eq!(listed, m.total_params());
}

#[test]
fn backbone_parameters_are_counted_but_frozen() {
    let m = build(ModelName::Res50E, 128, 0);
    let manifest = m.manifest();
    assert!(!manifest[0].trainable);
    assert_eq!(manifest[0].params, 23_508_032);
    assert_eq!(m.total_params() - m.trainable_params(), 23_508_032);
    let text = describe_model(&m);
    assert!(text.contains("frozen 23508032"), "{text}");
    assert!(text.contains("normalization: backbone_preprocess"), "{text}");
}

#[test]
fn head_weights_are_seeded() {
    let a = build(ModelName::Sm, 12, 4);
    let b = build(ModelName::Sm, 12, 4);
    let c = build(ModelName::Sm, 12, 5);
    assert_eq!(a.head_digest().unwrap(), b.head_digest().unwrap());
    assert_ne!(a.head_digest().unwrap(), c.head_digest().unwrap());
}

#[test]
fn predictions_are_probability_rows() {
    let data = bundle(12);
    let mut m = build(ModelName::Sm, 12, 1);
    let idx: Vec<usize> = (0..data.test().len()).collect();
    let p = m.predict(data.test(), &idx).unwrap().to_vec2::<f32>().unwrap();
    assert_eq!(p.len(), idx.len());
    for row in p {
        assert_eq!(row.len(), 7);
        assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn dense_heads_differ_only_in_width() {
    let a = ModelName::Effv2E.config();
    let b = ModelName::Effv3E.config();
    let la = dermabench_core::zoo::head_layers(&a.head, a.head_input_shape(224)).unwrap();
    let lb = dermabench_core::zoo::head_layers(&b.head, b.head_input_shape(224)).unwrap();
    let render = |l: &[dermabench_core::zoo::LayerSpec]| l.iter().map(|x| x.kind.to_string()).collect::<Vec<_>>();
    let swapped: Vec<String> = render(&la).iter().map(|k| k.replace("dense(128", "dense(64")).collect();
    assert_eq!(swapped, render(&lb));
    assert_eq!(layer_tags(&la), "flatten batch_norm dense batch_norm dense");
    // 7·7·1280 features into 128 vs 64 units
    assert_eq!(la[2].params - lb[2].params, 62_720 * 64 + 64);
}

#[test]
fn scratch_and_backbone_heads_share_a_layout() {
    let sm = ModelName::Sm.config();
    let eff = ModelName::Effv1E.config();
    let a = dermabench_core::zoo::head_layers(&sm.head, sm.head_input_shape(64)).unwrap();
    let b = dermabench_core::zoo::head_layers(&eff.head, eff.head_input_shape(224)).unwrap();
    assert_eq!(layer_tags(&a), layer_tags(&b));
    assert_eq!(sm.head, eff.head);
}

#[test]
fn inputs_below_the_minimum_are_rejected_with_the_minimum() {
    let config = ModelName::Sm.config();
    let err = build_model(&config, 3, 0, None).unwrap_err();
    assert!(matches!(err, Error::Build(_)));
    assert!(err.to_string().contains("4×4"), "{err}");
}

#[test]
fn backbone_presence_must_match_the_config() {
    let config = ModelName::Res50E.config();
    assert!(matches!(build_model(&config, 32, 0, None), Err(Error::Build(_))));
}

#[test]
fn missing_pretrained_weights_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_backbone(BackboneKind::ResNet50, &WeightsSpec::default(), dir.path(), &Device::Cpu).unwrap_err();
    assert!(err.to_string().contains("resnet50.safetensors"), "{err}");
}

#[test]
fn frozen_digest_needs_a_backbone() {
    assert!(build(ModelName::Sm, 8, 0).frozen_digest().is_err());
    let m = build(ModelName::Res50E, 128, 0);
    assert_eq!(m.frozen_digest().unwrap().len(), 64);
}

#[test]
fn checkpoints_restore_identical_predictions() {
    let data = bundle(8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck").join("best.ckpt");
    let mut a = build(ModelName::Sm, 8, 1);
    save_checkpoint(&a.head_state(), &path).unwrap();
    let mut b = build(ModelName::Sm, 8, 2);
    assert_ne!(a.head_digest().unwrap(), b.head_digest().unwrap());
    load_checkpoint(&mut b, &path).unwrap();
    assert_eq!(a.head_digest().unwrap(), b.head_digest().unwrap());
    let idx: Vec<usize> = (0..7).collect();
    let pa = a.predict(data.test(), &idx).unwrap().to_vec2::<f32>().unwrap();
    let pb = b.predict(data.test(), &idx).unwrap().to_vec2::<f32>().unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn checkpoint_from_another_architecture_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    save_checkpoint(&build(ModelName::Sm, 8, 1).head_state(), &path).unwrap();
    let mut other = build(ModelName::Sm, 12, 1);
    assert!(matches!(load_checkpoint(&mut other, &path), Err(Error::Checkpoint(_))));
    assert!(matches!(
        load_checkpoint(&mut other, &dir.path().join("absent.ckpt")),
        Err(Error::Checkpoint(_))
    ));
}
