//! The seven named network configurations and their head layer plans.
//!
//! A configuration is a frozen ImageNet backbone (or none) plus one of three
//! classification heads. [`head_layers`] expands a head into its ordered
//! layer list with output shapes and parameter counts; the network builder
//! in the `dermabench` crate instantiates exactly this list.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::label::NUM_CLASSES;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    ResNet50,
    EfficientNetV2L,
    None,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::ResNet50 => "resnet50",
            BackboneKind::EfficientNetV2L => "efficientnetv2l",
            BackboneKind::None => "none",
        }
    }

    /// Channels of the final convolutional feature map (the raw image for `None`).
    pub fn feature_channels(self) -> usize {
        match self {
            BackboneKind::ResNet50 => 2048,
            BackboneKind::EfficientNetV2L => 1280,
            BackboneKind::None => 3,
        }
    }

    /// Side of the final feature map for a square input: five stride-2
    /// stages with "same"-style padding each map `s` to `ceil(s / 2)`.
    pub fn feature_side(self, input_side: usize) -> usize {
        match self {
            BackboneKind::None => input_side,
            _ => (0..5).fold(input_side, |s, _| s.div_ceil(2)),
        }
    }

    /// Smallest input side the backbone itself accepts.
    pub fn min_input_side(self) -> usize {
        match self {
            BackboneKind::None => 1,
            _ => 32,
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    ConvHead,
    Dense128Head,
    Dense64Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub variant: HeadVariant,
    /// Rates of the head's dropout layers, in layer order.
    pub dropout_rates: Vec<f64>,
    pub dense_units: usize,
    pub output_units: usize,
}

impl HeadConfig {
    /// Convolutional head: two pooled blocks of 3×3 convolutions (32 then 64
    /// filters), a pair of 128-filter convolutions, then flatten, batch norm,
    /// a 128-unit dense layer and the softmax output.
    pub fn conv_head() -> Self {
        HeadConfig {
            variant: HeadVariant::ConvHead,
            dropout_rates: vec![0.25, 0.25, 0.25, 0.5],
            dense_units: 128,
            output_units: NUM_CLASSES,
        }
    }

    pub fn dense_head(units: usize) -> Self {
        HeadConfig {
            variant: if units == 64 {
                HeadVariant::Dense64Head
            } else {
                HeadVariant::Dense128Head
            },
            dropout_rates: Vec::new(),
            dense_units: units,
            output_units: NUM_CLASSES,
        }
    }

    /// Smallest feature-map side the head can consume.
    pub fn min_feature_side(&self) -> usize {
        match self.variant {
            // two 2×2 floor pools must leave at least one pixel
            HeadVariant::ConvHead => 4,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let want_dropouts = match self.variant {
            HeadVariant::ConvHead => 4,
            _ => 0,
        };
        if self.dropout_rates.len() != want_dropouts {
            return Err(Error::Config(format!(
                "{:?} has {want_dropouts} dropout layers, got {} rates",
                self.variant,
                self.dropout_rates.len()
            )));
        }
        if let Some(r) = self.dropout_rates.iter().find(|r| !(**r >= 0.0 && **r < 1.0)) {
            return Err(Error::Config(format!("dropout rate {r} outside [0, 1)")));
        }
        let want_units = match self.variant {
            HeadVariant::Dense64Head => Some(64),
            HeadVariant::Dense128Head => Some(128),
            HeadVariant::ConvHead => None,
        };
        if want_units.is_some_and(|u| u != self.dense_units) || self.dense_units == 0 {
            return Err(Error::Config(format!(
                "{:?} cannot have {} dense units",
                self.variant, self.dense_units
            )));
        }
        if self.output_units != NUM_CLASSES {
            return Err(Error::Config(format!("output layer must have {NUM_CLASSES} units")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelName {
    #[serde(rename = "Res50_e")]
    Res50E,
    #[serde(rename = "Eff_e")]
    EffE,
    #[serde(rename = "SM")]
    Sm,
    #[serde(rename = "Effv1_e")]
    Effv1E,
    #[serde(rename = "Effv2_e")]
    Effv2E,
    #[serde(rename = "Effv3_e")]
    Effv3E,
    #[serde(rename = "Effv4_e")]
    Effv4E,
}

impl ModelName {
    pub const ALL: [ModelName; 7] = [
        ModelName::Res50E,
        ModelName::EffE,
        ModelName::Sm,
        ModelName::Effv1E,
        ModelName::Effv2E,
        ModelName::Effv3E,
        ModelName::Effv4E,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Res50E => "Res50_e",
            ModelName::EffE => "Eff_e",
            ModelName::Sm => "SM",
            ModelName::Effv1E => "Effv1_e",
            ModelName::Effv2E => "Effv2_e",
            ModelName::Effv3E => "Effv3_e",
            ModelName::Effv4E => "Effv4_e",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|m| m.as_str()).collect();
            Error::Config(format!("unknown model `{s}`; expected one of {}", names.join(", ")))
        })
    }

    pub fn config(self) -> ModelConfig {
        let (backbone, head) = match self {
            ModelName::Res50E => (BackboneKind::ResNet50, HeadConfig::conv_head()),
            ModelName::EffE | ModelName::Effv1E => (BackboneKind::EfficientNetV2L, HeadConfig::conv_head()),
            ModelName::Sm => (BackboneKind::None, HeadConfig::conv_head()),
            ModelName::Effv2E => (BackboneKind::EfficientNetV2L, HeadConfig::dense_head(128)),
            ModelName::Effv3E | ModelName::Effv4E => (BackboneKind::EfficientNetV2L, HeadConfig::dense_head(64)),
        };
        ModelConfig {
            name: self,
            backbone,
            frozen_backbone: backbone != BackboneKind::None,
            head,
            input_side: 224,
            use_class_weights: self == ModelName::Effv4E,
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: ModelName,
    pub backbone: BackboneKind,
    /// Backbones are always ImageNet-pretrained and frozen.
    pub frozen_backbone: bool,
    pub head: HeadConfig,
    pub input_side: usize,
    pub use_class_weights: bool,
}

impl ModelConfig {
    /// Smallest input side for which both backbone and head are well defined.
    pub fn min_input_side(&self) -> usize {
        let need = self.head.min_feature_side();
        let mut s = self.backbone.min_input_side();
        while self.backbone.feature_side(s) < need {
            s += 1;
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        if self.frozen_backbone != (self.backbone != BackboneKind::None) {
            return Err(Error::Config("backbones are always frozen; models without one have nothing to freeze".into()));
        }
        if self.use_class_weights != (self.name == ModelName::Effv4E) {
            return Err(Error::Config(format!(
                "class weighting is fixed per configuration (only Effv4_e uses it), got {} for {}",
                self.use_class_weights, self.name
            )));
        }
        Ok(())
    }

    /// Shape (C, H, W) the head receives for an input of `input_side`.
    pub fn head_input_shape(&self, input_side: usize) -> [usize; 3] {
        let side = self.backbone.feature_side(input_side);
        [self.backbone.feature_channels(), side, side]
    }
}

/// All seven configurations, in table order.
pub fn named_configs() -> Vec<ModelConfig> {
    ModelName::ALL.iter().map(|m| m.config()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "layer")]
pub enum LayerKind {
    /// Square kernel, stride 1, "same" padding, ReLU.
    Conv2d { filters: usize, kernel: usize },
    MaxPool2d { size: usize },
    Dropout { rate: f64 },
    Flatten,
    BatchNorm,
    Dense { units: usize, activation: Activation },
}

impl LayerKind {
    /// Short kind name without hyperparameters.
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool2d { .. } => "max_pool2d",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Flatten => "flatten",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::Dense { .. } => "dense",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Conv2d { filters, kernel } => write!(f, "conv2d({filters}, {kernel}x{kernel}, relu)"),
            LayerKind::MaxPool2d { size } => write!(f, "max_pool2d({size}x{size})"),
            LayerKind::Dropout { rate } => write!(f, "dropout({rate})"),
            LayerKind::Flatten => f.write_str("flatten"),
            LayerKind::BatchNorm => f.write_str("batch_norm"),
            LayerKind::Dense { units, activation } => {
                let a = match activation {
                    Activation::Relu => "relu",
                    Activation::Softmax => "softmax",
                };
                write!(f, "dense({units}, {a})")
            }
        }
    }
}

/// A layer with the shape it produces (batch dimension omitted) and its
/// learnable parameter count. Batch-norm running statistics are buffers,
/// not parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

/// Expands `head` over an input feature map of shape (C, H, W).
pub fn head_layers(head: &HeadConfig, input: [usize; 3]) -> Result<Vec<LayerSpec>> {
    head.validate()?;
    let [mut c, mut h, mut w] = input;
    if h.min(w) < head.min_feature_side() {
        return Err(Error::Config(format!(
            "{:?} needs a feature map of at least {}×{}, got {h}×{w}",
            head.variant,
            head.min_feature_side(),
            head.min_feature_side()
        )));
    }
    let mut layers = Vec::new();
    let mut dropouts = head.dropout_rates.iter().copied();
    let mut features = 0;

    let conv = |layers: &mut Vec<LayerSpec>, c: &mut usize, filters: usize, h: usize, w: usize| {
        layers.push(LayerSpec {
            kind: LayerKind::Conv2d { filters, kernel: 3 },
            output_shape: vec![filters, h, w],
            params: 9 * *c * filters + filters,
        });
        *c = filters;
    };

    if head.variant == HeadVariant::ConvHead {
        for _ in 0..2 {
            conv(&mut layers, &mut c, 32, h, w);
            conv(&mut layers, &mut c, 64, h, w);
            h /= 2;
            w /= 2;
            layers.push(LayerSpec {
                kind: LayerKind::MaxPool2d { size: 2 },
                output_shape: vec![c, h, w],
                params: 0,
            });
            let rate = dropouts.next().expect("validated");
            layers.push(LayerSpec {
                kind: LayerKind::Dropout { rate },
                output_shape: vec![c, h, w],
                params: 0,
            });
        }
        conv(&mut layers, &mut c, 128, h, w);
        conv(&mut layers, &mut c, 128, h, w);
        let rate = dropouts.next().expect("validated");
        layers.push(LayerSpec {
            kind: LayerKind::Dropout { rate },
            output_shape: vec![c, h, w],
            params: 0,
        });
    }
    features += c * h * w;
    layers.push(LayerSpec {
        kind: LayerKind::Flatten,
        output_shape: vec![features],
        params: 0,
    });
    layers.push(LayerSpec {
        kind: LayerKind::BatchNorm,
        output_shape: vec![features],
        params: 2 * features,
    });
    let units = head.dense_units;
    layers.push(LayerSpec {
        kind: LayerKind::Dense {
            units,
            activation: Activation::Relu,
        },
        output_shape: vec![units],
        params: features * units + units,
    });
    if head.variant == HeadVariant::ConvHead {
        let rate = dropouts.next().expect("validated");
        layers.push(LayerSpec {
            kind: LayerKind::Dropout { rate },
            output_shape: vec![units],
            params: 0,
        });
    }
    layers.push(LayerSpec {
        kind: LayerKind::BatchNorm,
        output_shape: vec![units],
        params: 2 * units,
    });
    layers.push(LayerSpec {
        kind: LayerKind::Dense {
            units: head.output_units,
            activation: Activation::Softmax,
        },
        output_shape: vec![head.output_units],
        params: units * head.output_units + head.output_units,
    });
    Ok(layers)
}

/// `kind` tags of a layer list joined by spaces; handy for structural diffs.
pub fn layer_tags(layers: &[LayerSpec]) -> String {
    let tags: Vec<&str> = layers.iter().map(|l| l.kind.tag()).collect();
    tags.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_unique_configs() {
        let cfgs = named_configs();
        assert_eq!(cfgs.len(), 7);
        let mut names: Vec<_> = cfgs.iter().map(|c| c.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 7);
        for c in &cfgs {
            c.validate().unwrap();
        }
    }

    #[test]
    fn config_table() {
        use BackboneKind::*;
        use HeadVariant::*;
        let want = [
            ("Res50_e", ResNet50, ConvHead, false),
            ("Eff_e", EfficientNetV2L, ConvHead, false),
            ("SM", None, ConvHead, false),
            ("Effv1_e", EfficientNetV2L, ConvHead, false),
            ("Effv2_e", EfficientNetV2L, Dense128Head, false),
            ("Effv3_e", EfficientNetV2L, Dense64Head, false),
            ("Effv4_e", EfficientNetV2L, Dense64Head, true),
        ];
        for (cfg, (name, backbone, head, weights)) in named_configs().iter().zip(want) {
            assert_eq!(cfg.name.as_str(), name);
            assert_eq!(cfg.backbone, backbone);
            assert_eq!(cfg.head.variant, head);
            assert_eq!(cfg.use_class_weights, weights);
            assert_eq!(cfg.frozen_backbone, backbone != None);
            assert_eq!(ModelName::parse(name).unwrap(), cfg.name);
        }
        assert_eq!(ModelName::Effv4E.config().head, ModelName::Effv3E.config().head);
        assert!(ModelName::parse("Effv5_e").is_err());
    }

    #[test]
    fn conv_head_structure() {
        let layers = head_layers(&HeadConfig::conv_head(), [3, 64, 64]).unwrap();
        assert_eq!(
            layer_tags(&layers),
            "conv2d conv2d max_pool2d dropout conv2d conv2d max_pool2d dropout conv2d conv2d dropout \
             flatten batch_norm dense dropout batch_norm dense"
        );
        assert_eq!(layers[10].output_shape, vec![128, 16, 16]);
        assert_eq!(layers[11].output_shape, vec![128 * 16 * 16]);
        assert_eq!(layers[0].params, 3 * 9 * 32 + 32);
        assert_eq!(layers.last().unwrap().output_shape, vec![7]);
    }

    #[test]
    fn dense_heads_differ_only_in_units() {
        let a = head_layers(&HeadConfig::dense_head(128), [1280, 7, 7]).unwrap();
        let b = head_layers(&HeadConfig::dense_head(64), [1280, 7, 7]).unwrap();
        assert_eq!(layer_tags(&a), "flatten batch_norm dense batch_norm dense");
        assert_eq!(layer_tags(&a), layer_tags(&b));
        assert_eq!(b[2].kind, LayerKind::Dense { units: 64, activation: Activation::Relu });
        assert_eq!(b[2].params, 62720 * 64 + 64);
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn minimum_input_sides() {
        assert_eq!(ModelName::Sm.config().min_input_side(), 4);
        assert_eq!(ModelName::Res50E.config().min_input_side(), 97);
        assert_eq!(ModelName::Effv3E.config().min_input_side(), 32);
        assert_eq!(BackboneKind::ResNet50.feature_side(224), 7);
        assert_eq!(BackboneKind::EfficientNetV2L.feature_side(64), 2);
        assert!(head_layers(&HeadConfig::conv_head(), [2048, 3, 3]).is_err());
    }

    #[test]
    fn rejects_inconsistent_heads() {
        let mut h = HeadConfig::conv_head();
        h.dropout_rates.pop();
        assert!(h.validate().is_err());
        let mut h = HeadConfig::dense_head(64);
        h.dense_units = 65;
        assert!(h.validate().is_err());
        let mut m = ModelName::Effv3E.config();
        m.use_class_weights = true;
        assert!(m.validate().is_err());
    }
}
