//! EfficientNetV2-L feature extractor with torchvision tensor names.

use candle_core::Tensor;

use super::layers::{Act, Collector, ConvBn, ConvSpec, SqueezeExcite};
use super::params::ParamSource;
use crate::Result;

const BN_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
enum BlockType {
    Fused,
    Mb,
}

struct Stage {
    kind: BlockType,
    expand: usize,
    kernel: usize,
    stride: usize,
    c_in: usize,
    c_out: usize,
    layers: usize,
}

const fn stage(kind: BlockType, expand: usize, stride: usize, c_in: usize, c_out: usize, layers: usize) -> Stage {
    Stage {
        kind,
        expand,
        kernel: 3,
        stride,
        c_in,
        c_out,
        layers,
    }
}

const STAGES: [Stage; 7] = [
    stage(BlockType::Fused, 1, 1, 32, 32, 4),
    stage(BlockType::Fused, 4, 2, 32, 64, 7),
    stage(BlockType::Fused, 4, 2, 64, 96, 7),
    stage(BlockType::Mb, 4, 2, 96, 192, 10),
    stage(BlockType::Mb, 6, 1, 192, 224, 19),
    stage(BlockType::Mb, 6, 2, 224, 384, 25),
    stage(BlockType::Mb, 6, 1, 384, 640, 7),
];

const HEAD_CHANNELS: usize = 1280;

fn spec(c_in: usize, c_out: usize, kernel: usize, stride: usize, depthwise: bool) -> ConvSpec {
    ConvSpec {
        c_in,
        c_out,
        kernel,
        stride,
        padding: (kernel - 1) / 2,
        depthwise,
    }
}

#[derive(Debug, Clone)]
struct Block {
    layers: Vec<ConvBn>,
    /// Squeeze-and-excitation, applied after `layers[se_after]`.
    se: Option<(usize, SqueezeExcite)>,
    residual: bool,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    fn load<S: ParamSource>(
        c: &mut Collector<'_, S>,
        p: &str,
        kind: BlockType,
        expand: usize,
        kernel: usize,
        stride: usize,
        c_in: usize,
        c_out: usize,
        residual_gamma: f32,
    ) -> Result<Self> {
        let residual = stride == 1 && c_in == c_out;
        let last_gamma = if residual { residual_gamma } else { 1.0 };
        let hidden = c_in * expand;
        let cb = |c: &mut Collector<'_, S>, idx: usize, s: ConvSpec, act: Act, gamma: f32| {
            ConvBn::load(c, &format!("{p}.block.{idx}.0"), &format!("{p}.block.{idx}.1"), s, BN_EPS, act, gamma)
        };
        let mut layers = Vec::new();
        let mut se = None;
        match kind {
            BlockType::Fused if hidden != c_in => {
                layers.push(cb(c, 0, spec(c_in, hidden, kernel, stride, false), Act::Silu, 1.0)?);
                layers.push(cb(c, 1, spec(hidden, c_out, 1, 1, false), Act::None, last_gamma)?);
            }
            BlockType::Fused => {
                layers.push(cb(c, 0, spec(c_in, c_out, kernel, stride, false), Act::Silu, last_gamma)?);
            }
            BlockType::Mb => {
                let mut idx = 0;
                if hidden != c_in {
                    layers.push(cb(c, idx, spec(c_in, hidden, 1, 1, false), Act::Silu, 1.0)?);
                    idx += 1;
                }
                layers.push(cb(c, idx, spec(hidden, hidden, kernel, stride, true), Act::Silu, 1.0)?);
                let squeeze = (c_in / 4).max(1);
                se = Some((layers.len() - 1, SqueezeExcite::load(c, &format!("{p}.block.{}", idx + 1), hidden, squeeze)?));
                layers.push(cb(c, idx + 2, spec(hidden, c_out, 1, 1, false), Act::None, last_gamma)?);
            }
        }
        Ok(Block { layers, se, residual })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if let Some((at, se)) = &self.se {
                if *at == i {
                    h = se.forward(&h)?;
                }
            }
        }
        if self.residual {
            h = (h + x)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EfficientNetV2L {
    stem: ConvBn,
    blocks: Vec<Block>,
    head: ConvBn,
}

impl EfficientNetV2L {
    pub fn load<S: ParamSource>(c: &mut Collector<'_, S>, residual_gamma: f32) -> Result<Self> {
        let stem = ConvBn::load(c, "features.0.0", "features.0.1", spec(3, 32, 3, 2, false), BN_EPS, Act::Silu, 1.0)?;
        let mut blocks = Vec::new();
        for (s, st) in STAGES.iter().enumerate() {
            for i in 0..st.layers {
                let (c_in, stride) = if i == 0 { (st.c_in, st.stride) } else { (st.c_out, 1) };
                let prefix = format!("features.{}.{i}", s + 1);
                blocks.push(Block::load(
                    c,
                    &prefix,
                    st.kind,
                    st.expand,
                    st.kernel,
                    stride,
                    c_in,
                    st.c_out,
                    residual_gamma,
                )?);
            }
        }
        let last = STAGES[STAGES.len() - 1].c_out;
        let head = ConvBn::load(
            c,
            "features.8.0",
            "features.8.1",
            spec(last, HEAD_CHANNELS, 1, 1, false),
            BN_EPS,
            Act::Silu,
            1.0,
        )?;
        Ok(EfficientNetV2L { stem, blocks, head })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut h = self.stem.forward(x)?;
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        self.head.forward(&h)
    }
}
