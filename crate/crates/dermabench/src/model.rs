//! Model assembly: a frozen backbone (or none) under a trainable head.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use dermabench_core::dataset::Split;
use dermabench_core::zoo::LayerSpec;
use dermabench_core::{BackboneKind, ModelConfig, Normalization};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::IoContext;
use crate::nn::head::{Head, Mode};
use crate::nn::params::{digest, TensorMap};
use crate::nn::Backbone;
use crate::{Error, Result};

/// Images per backbone forward pass; bounds peak activation memory.
pub const BACKBONE_CHUNK: usize = 16;

/// File name of converted ImageNet weights for `kind` in the weights cache.
pub fn weights_file_name(kind: BackboneKind) -> Option<&'static str> {
    match kind {
        BackboneKind::ResNet50 => Some("resnet50.safetensors"),
        BackboneKind::EfficientNetV2L => Some("efficientnet_v2_l.safetensors"),
        BackboneKind::None => None,
    }
}

/// Where backbone weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum WeightsSpec {
    /// ImageNet weights in torchvision layout (safetensors). Without a
    /// `path`, the file is looked up in the weights cache directory.
    Pretrained {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    /// Seeded random weights with the same architecture, for dry runs.
    Synthetic { seed: u64 },
}

impl Default for WeightsSpec {
    fn default() -> Self {
        WeightsSpec::Pretrained { path: None }
    }
}

/// Provenance of loaded backbone weights, recorded with each run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightsInfo {
    pub backbone: BackboneKind,
    /// `pretrained` or `synthetic`.
    pub source: String,
    pub path: Option<PathBuf>,
    /// SHA-256 of the weights file; for synthetic weights, of the tensors.
    pub sha256: String,
}

/// Streams a file through SHA-256.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = File::open(path).at(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).at(path)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Loads the backbone named by `kind` from `spec`. `weights_dir` is the
/// cache consulted for pretrained weights without an explicit path.
pub fn load_backbone(
    kind: BackboneKind,
    spec: &WeightsSpec,
    weights_dir: &Path,
    device: &Device,
) -> Result<(Backbone, WeightsInfo)> {
    match spec {
        WeightsSpec::Synthetic { seed } => {
            let b = Backbone::synthetic(kind, *seed, device)?;
            let sha256 = digest(b.tensors())?;
            Ok((
                b,
                WeightsInfo {
                    backbone: kind,
                    source: "synthetic".into(),
                    path: None,
                    sha256,
                },
            ))
        }
        WeightsSpec::Pretrained { path } => {
            let file = match path {
                Some(p) => p.clone(),
                None => {
                    let name = weights_file_name(kind).ok_or_else(|| Error::Build("no backbone to load".into()))?;
                    weights_dir.join(name)
                }
            };
            if !file.is_file() {
                return Err(Error::Build(format!(
                    "pretrained {kind} weights not found at {}; fetch them with `download-data --backbone {kind}` \
                     or point the weights path at a converted torchvision file",
                    file.display()
                )));
            }
            let sha256 = file_sha256(&file)?;
            let tensors = candle_core::safetensors::load(&file, device)?;
            let b = Backbone::from_tensors(kind, &tensors, device)?;
            Ok((
                b,
                WeightsInfo {
                    backbone: kind,
                    source: "pretrained".into(),
                    path: Some(file),
                    sha256,
                },
            ))
        }
    }
}

/// One row of a model manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub layer: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub trainable: bool,
}

/// A built network: optional frozen backbone, trainable head, and the
/// input normalization the backbone expects.
#[derive(Debug)]
pub struct ModelHandle {
    config: ModelConfig,
    input_side: usize,
    seed: u64,
    normalization: Normalization,
    backbone: Option<Backbone>,
    head: Head,
    weights: Option<WeightsInfo>,
    device: Device,
}

/// Builds `config` for `input_side`-pixel inputs. `backbone` must be given
/// exactly when the configuration has one; head weights are drawn from
/// `seed`.
pub fn build_model(
    config: &ModelConfig,
    input_side: usize,
    seed: u64,
    backbone: Option<(Backbone, WeightsInfo)>,
) -> Result<ModelHandle> {
    config.validate()?;
    let min = config.min_input_side();
    if input_side < min {
        return Err(Error::Build(format!(
            "{} needs inputs of at least {min}×{min} pixels, got {input_side}×{input_side}",
            config.name
        )));
    }
    let (backbone, weights) = match (config.backbone, backbone) {
        (BackboneKind::None, None) => (None, None),
        (BackboneKind::None, Some(_)) => {
            return Err(Error::Build(format!("{} has no backbone", config.name)));
        }
        (kind, Some((b, info))) if b.kind() == kind => (Some(b), Some(info)),
        (kind, _) => {
            return Err(Error::Build(format!("{} needs a {kind} backbone", config.name)));
        }
    };
    let device = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = Head::new(&config.head, config.head_input_shape(input_side), &mut rng, &device)?;
    Ok(ModelHandle {
        config: config.clone(),
        input_side,
        seed,
        normalization: Normalization::for_backbone(config.backbone),
        backbone,
        head,
        weights,
        device,
    })
}

impl ModelHandle {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn weights(&self) -> Option<&WeightsInfo> {
        self.weights.as_ref()
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn backbone(&self) -> Option<&Backbone> {
        self.backbone.as_ref()
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Head {
        &mut self.head
    }

    /// Head layers, as planned.
    pub fn head_plan(&self) -> &[LayerSpec] {
        self.head.plan()
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        let mut out = Vec::new();
        if let Some(b) = &self.backbone {
            let [c, h, w] = self.config.head_input_shape(self.input_side);
            out.push(ManifestEntry {
                layer: format!("{} backbone", b.kind()),
                output_shape: vec![c, h, w],
                params: b.param_count(),
                trainable: false,
            });
        }
        for l in self.head.plan() {
            out.push(ManifestEntry {
                layer: l.kind.to_string(),
                output_shape: l.output_shape.clone(),
                params: l.params,
                trainable: true,
            });
        }
        out
    }

    pub fn trainable_params(&self) -> usize {
        self.head.trainable_count()
    }

    pub fn total_params(&self) -> usize {
        self.trainable_params() + self.backbone.as_ref().map_or(0, |b| b.param_count())
    }

    /// Backbone-normalized images `indices` of `split`, as (B, 3, S, S).
    pub fn image_batch(&self, split: &Split, indices: &[usize]) -> Result<Tensor> {
        let side = split.side();
        if side != self.input_side {
            return Err(Error::Build(format!(
                "{} was built for {}×{} inputs, images are {side}×{side}",
                self.config.name, self.input_side, self.input_side
            )));
        }
        let per = split.image_len();
        let mut data = vec![0f32; indices.len() * per];
        for (k, &i) in indices.iter().enumerate() {
            self.normalization.apply_into(split.image(i), &mut data[k * per..(k + 1) * per]);
        }
        Ok(Tensor::from_vec(data, (indices.len(), 3, side, side), &self.device)?)
    }

    /// What the head consumes for images `indices`: backbone features, or
    /// the normalized images themselves when there is no backbone.
    pub fn head_inputs(&self, split: &Split, indices: &[usize]) -> Result<Tensor> {
        match &self.backbone {
            None => self.image_batch(split, indices),
            Some(b) => {
                let mut parts = Vec::new();
                for chunk in indices.chunks(BACKBONE_CHUNK) {
                    parts.push(b.forward(&self.image_batch(split, chunk)?)?);
                }
                Ok(Tensor::cat(&parts, 0)?)
            }
        }
    }

    /// Class probabilities (B, 7) for images `indices` of `split`.
    pub fn predict(&mut self, split: &Split, indices: &[usize]) -> Result<Tensor> {
        let x = self.head_inputs(split, indices)?;
        self.head.forward(&x, Mode::Eval)
    }

    /// Backbone digest; errors for configurations without a backbone.
    pub fn frozen_digest(&self) -> Result<String> {
        match &self.backbone {
            Some(b) => digest(b.tensors()),
            None => Err(Error::Build(format!("{} has no frozen backbone", self.config.name))),
        }
    }

    /// Digest of every head variable and running statistic.
    pub fn head_digest(&self) -> Result<String> {
        digest(&self.head.state())
    }

    pub fn head_state(&self) -> TensorMap {
        self.head.state()
    }
}

/// Human-readable manifest: backbone section, head layers, totals.
pub fn describe_model(model: &ModelHandle) -> String {
    let mut s = String::new();
    let side = model.input_side;
    let _ = writeln!(s, "model {} (input {side}x{side}x3, head seed {})", model.config.name, model.seed);
    let _ = writeln!(s, "normalization: {}", model.normalization);
    let entries = model.manifest();
    let row = |s: &mut String, e: &ManifestEntry| {
        let shape: Vec<String> = e.output_shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(
            s,
            "  {:<28} {:<16} {:>12}  {}",
            e.layer,
            format!("[{}]", shape.join(", ")),
            e.params,
            if e.trainable { "trainable" } else { "frozen" }
        );
    };
    let mut rest = entries.as_slice();
    if model.backbone.is_some() {
        let _ = writeln!(s, "backbone (frozen, ImageNet architecture):");
        row(&mut s, &rest[0]);
        rest = &rest[1..];
    }
    let _ = writeln!(s, "head ({:?}):", model.config.head.variant);
    for e in rest {
        row(&mut s, e);
    }
    let trainable = model.trainable_params();
    let total = model.total_params();
    let _ = writeln!(
        s,
        "params: total {total}, trainable {trainable}, frozen {}",
        total - trainable
    );
    s
}

/// Writes `state` as safetensors through a temporary file renamed into
/// place, so readers never see a half-written checkpoint.
pub fn save_checkpoint(state: &TensorMap, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension("ckpt.partial");
    let contiguous: std::collections::HashMap<String, Tensor> = state
        .iter()
        .map(|(k, v)| Ok((k.clone(), v.to_dtype(DType::F32)?.contiguous()?)))
        .collect::<candle_core::Result<_>>()?;
    candle_core::safetensors::save(&contiguous, &tmp)?;
    std::fs::rename(&tmp, path).at(path)?;
    Ok(())
}

pub fn load_checkpoint(model: &mut ModelHandle, path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Checkpoint(format!("{} does not exist", path.display())));
    }
    let state = candle_core::safetensors::load(path, &model.device)?;
    model.head.load_state(&state)
}
