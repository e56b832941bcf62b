//! Pixel preprocessing: value normalization and bilinear resizing.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetBundle, Transform, CHANNELS};
use crate::zoo::BackboneKind;
use crate::{Error, Result};

/// Per-channel mean and standard deviation applied after scaling to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

const IMAGENET: ChannelStats = ChannelStats {
    mean: [0.485, 0.456, 0.406],
    std: [0.229, 0.224, 0.225],
};

const SYMMETRIC: ChannelStats = ChannelStats {
    mean: [0.5, 0.5, 0.5],
    std: [0.5, 0.5, 0.5],
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "backbone")]
pub enum Normalization {
    /// raw / 255
    UnitInterval,
    /// The canonical input transform of the backbone's published weights.
    BackbonePreprocess(BackboneKind),
}

impl Normalization {
    /// Unit interval for scratch models, the backbone's own transform otherwise.
    pub fn for_backbone(kind: BackboneKind) -> Self {
        match kind {
            BackboneKind::None => Normalization::UnitInterval,
            k => Normalization::BackbonePreprocess(k),
        }
    }

    pub fn parse(mode: &str, backbone: BackboneKind) -> Result<Self> {
        match mode {
            "unit_interval" => Ok(Normalization::UnitInterval),
            "backbone_preprocess" if backbone != BackboneKind::None => {
                Ok(Normalization::BackbonePreprocess(backbone))
            }
            "backbone_preprocess" => Err(Error::Config(
                "backbone_preprocess needs a backbone".into(),
            )),
            other => Err(Error::Config(format!("unknown normalization mode `{other}`"))),
        }
    }

    pub fn stats(self) -> Option<ChannelStats> {
        match self {
            Normalization::UnitInterval => None,
            // torchvision ResNet-50 ImageNet weights
            Normalization::BackbonePreprocess(BackboneKind::ResNet50) => Some(IMAGENET),
            // torchvision EfficientNetV2-L ImageNet weights
            Normalization::BackbonePreprocess(BackboneKind::EfficientNetV2L) => Some(SYMMETRIC),
            Normalization::BackbonePreprocess(BackboneKind::None) => None,
        }
    }

    /// Writes one `side × side × 3` image into `out` in channels-first order.
    pub fn apply_into(self, pixels: &[u8], out: &mut [f32]) {
        debug_assert_eq!(pixels.len(), out.len());
        let plane = pixels.len() / CHANNELS;
        let stats = self.stats();
        for (i, px) in pixels.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                let unit = px[c] as f32 / 255.0;
                out[c * plane + i] = match stats {
                    None => unit,
                    Some(s) => (unit - s.mean[c]) / s.std[c],
                };
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::UnitInterval => "unit_interval",
            Normalization::BackbonePreprocess(_) => "backbone_preprocess",
        }
    }

    pub fn apply(self, pixels: &[u8]) -> Vec<f32> {
        let mut out = alloc::vec![0.0; pixels.len()];
        self.apply_into(pixels, &mut out);
        out
    }
}

impl core::fmt::Display for Normalization {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self.stats() {
            None => f.write_str(self.as_str()),
            Some(s) => write!(f, "{} (mean {:?}, std {:?})", self.as_str(), s.mean, s.std),
        }
    }
}

/// Channels-first float tensors for every split of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplits {
    pub side: usize,
    pub normalization: Normalization,
    pub train: Vec<f32>,
    pub validation: Vec<f32>,
    pub test: Vec<f32>,
}

/// Materializes every image as normalized floats. The trainer normalizes
/// batch by batch instead; this is for small bundles and inspection.
pub fn normalize_images(bundle: &DatasetBundle, mode: Normalization) -> PreparedSplits {
    let run = |s: &crate::Split| {
        let mut out = alloc::vec![0.0; s.pixels().len()];
        for (i, (img, _)) in s.iter().enumerate() {
            let n = img.len();
            mode.apply_into(img, &mut out[i * n..(i + 1) * n]);
        }
        out
    };
    PreparedSplits {
        side: bundle.side(),
        normalization: mode,
        train: run(bundle.train()),
        validation: run(bundle.validation()),
        test: run(bundle.test()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Half-pixel-centre bilinear, edge-clamped, rounded to the nearest byte.
    Bilinear,
}

/// Bilinear resize of one channels-last RGB image.
pub fn resize_image(pixels: &[u8], side: usize, target: usize) -> Vec<u8> {
    if target == side {
        return pixels.to_vec();
    }
    let scale = side as f32 / target as f32;
    let max = (side - 1) as f32;
    // Source taps along one axis: (lower index, upper index, upper weight).
    let taps: Vec<(usize, usize, f32)> = (0..target)
        .map(|d| {
            let s = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s as usize;
            let hi = (lo + 1).min(side - 1);
            (lo, hi, s - lo as f32)
        })
        .collect();
    let mut out = Vec::with_capacity(target * target * CHANNELS);
    for &(y0, y1, wy) in &taps {
        for &(x0, x1, wx) in &taps {
            for c in 0..CHANNELS {
                let at = |y: usize, x: usize| pixels[(y * side + x) * CHANNELS + c] as f32;
                let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
                let bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
                let v = top * (1.0 - wy) + bottom * wy;
                out.push(libm::roundf(v).clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Resizes every image in the bundle to `target × target`. Shrinking needs
/// `allow_downscale`.
pub fn resize_images(bundle: &DatasetBundle, target: usize, allow_downscale: bool) -> Result<DatasetBundle> {
    if target == 0 {
        return Err(Error::Config("resize target must be positive".into()));
    }
    let side = bundle.side();
    if target < side && !allow_downscale {
        return Err(Error::Config(format!(
            "resizing {side} → {target} shrinks images; pass the downscale flag to allow it"
        )));
    }
    let run = |s: &crate::Split| s.map_images(target, |img| resize_image(img, side, target));
    Ok(bundle.derive(
        run(bundle.train()),
        run(bundle.validation()),
        run(bundle.test()),
        Transform::Resize {
            side: target,
            interpolation: Interpolation::Bilinear,
        },
    ))
}
