//! ResNet-50 (v1.5, stride on the 3×3 convolution) feature extractor with
//! torchvision tensor names.

use candle_core::Tensor;

use super::layers::{max_pool_padded, Act, Collector, ConvBn, ConvSpec};
use super::params::ParamSource;
use crate::Result;

const BN_EPS: f64 = 1e-5;
const STAGES: [(usize, usize); 4] = [(64, 3), (128, 4), (256, 6), (512, 3)];
const EXPANSION: usize = 4;

#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: ConvBn,
    conv2: ConvBn,
    conv3: ConvBn,
    downsample: Option<ConvBn>,
}

impl Bottleneck {
    fn load<S: ParamSource>(
        c: &mut Collector<'_, S>,
        p: &str,
        inplanes: usize,
        planes: usize,
        stride: usize,
        residual_gamma: f32,
    ) -> Result<Self> {
        let out = planes * EXPANSION;
        let conv = |c_in, c_out, kernel, stride| ConvSpec {
            c_in,
            c_out,
            kernel,
            stride,
            padding: kernel / 2,
            depthwise: false,
        };
        let conv1 = ConvBn::load(c, &format!("{p}.conv1"), &format!("{p}.bn1"), conv(inplanes, planes, 1, 1), BN_EPS, Act::Relu, 1.0)?;
        let conv2 = ConvBn::load(c, &format!("{p}.conv2"), &format!("{p}.bn2"), conv(planes, planes, 3, stride), BN_EPS, Act::Relu, 1.0)?;
        let conv3 = ConvBn::load(
            c,
            &format!("{p}.conv3"),
            &format!("{p}.bn3"),
            conv(planes, out, 1, 1),
            BN_EPS,
            Act::None,
            residual_gamma,
        )?;
        let downsample = if stride != 1 || inplanes != out {
            Some(ConvBn::load(
                c,
                &format!("{p}.downsample.0"),
                &format!("{p}.downsample.1"),
                conv(inplanes, out, 1, stride),
                BN_EPS,
                Act::None,
                1.0,
            )?)
        } else {
            None
        };
        Ok(Bottleneck {
            conv1,
            conv2,
            conv3,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = self.conv3.forward(&self.conv2.forward(&self.conv1.forward(x)?)?)?;
        let skip = match &self.downsample {
            Some(d) => d.forward(x)?,
            None => x.clone(),
        };
        (y + skip)?.relu()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ResNet50 {
    stem: ConvBn,
    blocks: Vec<Bottleneck>,
}

impl ResNet50 {
    /// `residual_gamma` initializes the last batch norm of every residual
    /// branch when weights are synthesized; loaded weights ignore it.
    pub fn load<S: ParamSource>(c: &mut Collector<'_, S>, residual_gamma: f32) -> Result<Self> {
        let stem = ConvBn::load(
            c,
            "conv1",
            "bn1",
            ConvSpec {
                c_in: 3,
                c_out: 64,
                kernel: 7,
                stride: 2,
                padding: 3,
                depthwise: false,
            },
            BN_EPS,
            Act::Relu,
            1.0,
        )?;
        let mut blocks = Vec::new();
        let mut inplanes = 64;
        for (stage, (planes, depth)) in STAGES.iter().enumerate() {
            for i in 0..*depth {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                let prefix = format!("layer{}.{i}", stage + 1);
                blocks.push(Bottleneck::load(c, &prefix, inplanes, *planes, stride, residual_gamma)?);
                inplanes = planes * EXPANSION;
            }
        }
        Ok(ResNet50 { stem, blocks })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut h = max_pool_padded(&self.stem.forward(x)?, 3, 2, 1)?;
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        Ok(h)
    }
}
