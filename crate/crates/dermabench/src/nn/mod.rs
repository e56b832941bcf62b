//! Networks: frozen inference-only backbones and the trainable head.

mod efficientnet;
pub mod head;
mod ops;
pub(crate) mod layers;
pub mod params;
mod resnet;

use std::collections::HashMap;

use candle_core::{Device, Tensor};
use dermabench_core::BackboneKind;

use efficientnet::EfficientNetV2L;
use layers::Collector;
use params::{FromMap, ParamSource, Seeded, TensorMap};
use resnet::ResNet50;

use crate::{Error, Result};

/// Initial scale of the last batch norm in each residual branch when weights
/// are synthesized, so that deep random stacks stay numerically tame.
const SYNTHETIC_RESIDUAL_GAMMA: f32 = 0.2;

#[derive(Debug, Clone)]
enum Net {
    ResNet50(ResNet50),
    EfficientNetV2L(EfficientNetV2L),
}

/// A frozen feature extractor. Its tensors are plain values, never
/// variables, so no gradient can reach them.
#[derive(Debug, Clone)]
pub struct Backbone {
    kind: BackboneKind,
    net: Net,
    params: TensorMap,
    learnable: usize,
}

impl Backbone {
    /// Assembles `kind` from a loaded weights file (torchvision names).
    pub fn from_tensors(kind: BackboneKind, tensors: &HashMap<String, Tensor>, device: &Device) -> Result<Self> {
        Self::build(kind, FromMap { map: tensors, device })
    }

    /// Assembles `kind` with seeded random weights.
    pub fn synthetic(kind: BackboneKind, seed: u64, device: &Device) -> Result<Self> {
        Self::build(kind, Seeded::new(seed, device))
    }

    fn build<S: ParamSource>(kind: BackboneKind, source: S) -> Result<Self> {
        let mut params = TensorMap::new();
        let mut c = Collector {
            source,
            params: &mut params,
            counted: 0,
        };
        let net = match kind {
            BackboneKind::ResNet50 => Net::ResNet50(ResNet50::load(&mut c, SYNTHETIC_RESIDUAL_GAMMA)?),
            BackboneKind::EfficientNetV2L => {
                Net::EfficientNetV2L(EfficientNetV2L::load(&mut c, SYNTHETIC_RESIDUAL_GAMMA)?)
            }
            BackboneKind::None => return Err(Error::Build("no backbone to build".into())),
        };
        let learnable = c.counted;
        Ok(Backbone {
            kind,
            net,
            params,
            learnable,
        })
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    /// Every tensor, running statistics included, by torchvision name.
    pub fn tensors(&self) -> &TensorMap {
        &self.params
    }

    /// Scalars that would be learnable were the backbone not frozen.
    pub fn param_count(&self) -> usize {
        self.learnable
    }

    /// Feature maps (N, C, h, w) for normalized images (N, 3, H, W).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.detach();
        let y = match &self.net {
            Net::ResNet50(n) => n.forward(&x)?,
            Net::EfficientNetV2L(n) => n.forward(&x)?,
        };
        Ok(y.detach())
    }
}
