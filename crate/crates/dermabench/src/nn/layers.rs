//! Inference-only building blocks shared by the frozen backbones.

use candle_core::{Tensor, D};

use super::params::{Init, ParamSource, TensorMap};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Act {
    None,
    Relu,
    Silu,
}

impl Act {
    fn apply(self, x: Tensor) -> candle_core::Result<Tensor> {
        match self {
            Act::None => Ok(x),
            Act::Relu => x.relu(),
            Act::Silu => x.silu(),
        }
    }
}

/// Collects named tensors into the backbone's parameter map as they are taken.
pub(crate) struct Collector<'a, S: ParamSource> {
    pub source: S,
    pub params: &'a mut TensorMap,
    /// Learnable scalars taken so far; running statistics are not counted.
    pub counted: usize,
}

impl<S: ParamSource> Collector<'_, S> {
    pub fn take(&mut self, name: &str, shape: &[usize], init: Init, learnable: bool) -> Result<Tensor> {
        let t = self.source.take(name, shape, init)?;
        if learnable {
            self.counted += t.elem_count();
        }
        self.params.insert(name.to_string(), t.clone());
        Ok(t)
    }
}

/// Batch norm in inference mode, folded to a per-channel affine map.
#[derive(Debug, Clone)]
pub(crate) struct FrozenBatchNorm {
    scale: Tensor,
    shift: Tensor,
}

impl FrozenBatchNorm {
    pub fn load<S: ParamSource>(c: &mut Collector<'_, S>, prefix: &str, channels: usize, eps: f64, gamma: f32) -> Result<Self> {
        let shape = [channels];
        let weight = c.take(&format!("{prefix}.weight"), &shape, Init::Const(gamma), true)?;
        let bias = c.take(&format!("{prefix}.bias"), &shape, Init::Const(0.0), true)?;
        let mean = c.take(&format!("{prefix}.running_mean"), &shape, Init::Const(0.0), false)?;
        let var = c.take(&format!("{prefix}.running_var"), &shape, Init::Const(1.0), false)?;
        let scale = (weight / (var + eps)?.sqrt()?)?;
        let shift = (bias - (&mean * &scale)?)?;
        Ok(FrozenBatchNorm {
            scale: scale.reshape((1, channels, 1, 1))?,
            shift: shift.reshape((1, channels, 1, 1))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.broadcast_mul(&self.scale)?.broadcast_add(&self.shift)
    }
}

/// Convolution without bias, batch norm, activation.
#[derive(Debug, Clone)]
pub(crate) struct ConvBn {
    weight: Tensor,
    stride: usize,
    padding: usize,
    depthwise: bool,
    bn: FrozenBatchNorm,
    act: Act,
}

pub(crate) struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub depthwise: bool,
}

impl ConvBn {
    /// `conv` names the convolution weight's prefix and `bn` the batch norm's.
    #[allow(clippy::too_many_arguments)]
    pub fn load<S: ParamSource>(
        c: &mut Collector<'_, S>,
        conv: &str,
        bn: &str,
        spec: ConvSpec,
        eps: f64,
        act: Act,
        gamma: f32,
    ) -> Result<Self> {
        let in_per_group = if spec.depthwise { 1 } else { spec.c_in };
        let shape = [spec.c_out, in_per_group, spec.kernel, spec.kernel];
        let fan_in = in_per_group * spec.kernel * spec.kernel;
        let weight = c.take(&format!("{conv}.weight"), &shape, Init::HeNormal { fan_in }, true)?;
        Ok(ConvBn {
            weight,
            stride: spec.stride,
            padding: spec.padding,
            depthwise: spec.depthwise,
            bn: FrozenBatchNorm::load(c, bn, spec.c_out, eps, gamma)?,
            act,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = if self.depthwise {
            depthwise_conv2d(x, &self.weight, self.stride, self.padding)?
        } else if self.weight.dim(2)? == 1 && self.stride == 1 {
            pointwise_conv2d(x, &self.weight)?
        } else {
            x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?
        };
        self.act.apply(self.bn.forward(&y)?)
    }
}

/// 1×1 convolution as a batched matrix product.
pub(crate) fn pointwise_conv2d(x: &Tensor, weight: &Tensor) -> candle_core::Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let out = weight.dim(0)?;
    let w2 = weight.reshape((1, out, c))?;
    let x2 = x.reshape((n, c, h * w))?;
    w2.broadcast_matmul(&x2)?.reshape((n, out, h, w))
}

/// Depthwise convolution (one filter per channel) as a sum of shifted,
/// channel-scaled copies of the padded input; candle's grouped convolution
/// runs one kernel launch per group, which is unusable at 3840 channels.
pub(crate) fn depthwise_conv2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> candle_core::Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    let k = weight.dim(2)?;
    let xp = x.pad_with_zeros(2, padding, padding)?.pad_with_zeros(3, padding, padding)?;
    let ho = h + 2 * padding - k + 1;
    let wo = w + 2 * padding - k + 1;
    let mut acc: Option<Tensor> = None;
    for i in 0..k {
        for j in 0..k {
            let tap = weight.narrow(2, i, 1)?.narrow(3, j, 1)?.reshape((1, c, 1, 1))?;
            let term = xp.narrow(2, i, ho)?.narrow(3, j, wo)?.broadcast_mul(&tap)?;
            acc = Some(match acc {
                None => term,
                Some(a) => (a + term)?,
            });
        }
    }
    let full = acc.expect("kernel has at least one tap");
    if stride == 1 {
        return Ok(full);
    }
    let device = x.device();
    let pick = |len: usize| -> candle_core::Result<Tensor> {
        let idx: Vec<u32> = (0..len).step_by(stride).map(|i| i as u32).collect();
        Tensor::new(idx.as_slice(), device)
    };
    full.index_select(&pick(ho)?, 2)?.index_select(&pick(wo)?, 3)
}

/// Max pool with zero padding; only valid on non-negative inputs (post-ReLU).
pub(crate) fn max_pool_padded(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> candle_core::Result<Tensor> {
    x.pad_with_zeros(2, padding, padding)?
        .pad_with_zeros(3, padding, padding)?
        .max_pool2d_with_stride(kernel, stride)
}

/// Squeeze-and-excitation: global average, two 1×1 convolutions with bias
/// (SiLU then sigmoid), channel rescale.
#[derive(Debug, Clone)]
pub(crate) struct SqueezeExcite {
    fc1_w: Tensor,
    fc1_b: Tensor,
    fc2_w: Tensor,
    fc2_b: Tensor,
}

impl SqueezeExcite {
    pub fn load<S: ParamSource>(c: &mut Collector<'_, S>, prefix: &str, channels: usize, squeeze: usize) -> Result<Self> {
        let fc1_w = c.take(
            &format!("{prefix}.fc1.weight"),
            &[squeeze, channels, 1, 1],
            Init::HeNormal { fan_in: channels },
            true,
        )?;
        let fc1_b = c.take(&format!("{prefix}.fc1.bias"), &[squeeze], Init::Const(0.0), true)?;
        let fc2_w = c.take(
            &format!("{prefix}.fc2.weight"),
            &[channels, squeeze, 1, 1],
            Init::HeNormal { fan_in: squeeze },
            true,
        )?;
        let fc2_b = c.take(&format!("{prefix}.fc2.bias"), &[channels], Init::Const(0.0), true)?;
        Ok(SqueezeExcite {
            fc1_w: fc1_w.reshape((squeeze, channels))?,
            fc1_b,
            fc2_w: fc2_w.reshape((channels, squeeze))?,
            fc2_b,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (n, c, _, _) = x.dims4()?;
        let pooled = x.mean((2, 3))?; // (n, c)
        let s = pooled.matmul(&self.fc1_w.t()?)?.broadcast_add(&self.fc1_b)?.silu()?;
        let s = s.matmul(&self.fc2_w.t()?)?.broadcast_add(&self.fc2_b)?;
        let gate = candle_nn::ops::sigmoid(&s)?.reshape((n, c, 1, 1))?;
        x.broadcast_mul(&gate)
    }
}

/// Row-wise softmax over the last dimension.
pub(crate) fn softmax(x: &Tensor) -> candle_core::Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let z = e.sum_keepdim(D::Minus1)?;
    e.broadcast_div(&z)
}
