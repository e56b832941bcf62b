//! The trainable classification head, built from the layer plan in
//! [`dermabench_core::zoo::head_layers`].

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use dermabench_core::zoo::{head_layers, Activation, HeadConfig, LayerKind, LayerSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{bias_relu, im2col, max_pool2};
use super::layers::softmax;
use super::params::{sample, Init, TensorMap};
use crate::{Error, Result};

/// Decay of the batch-norm running averages (the Keras default). Short runs
/// leave a share of the initial unit variance in the averages.
pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-3;

#[derive(Debug)]
enum Layer {
    Conv { kernel: Var, bias: Var },
    MaxPool { size: usize },
    Dropout { rate: f64 },
    Flatten,
    BatchNorm { gamma: Var, beta: Var, mean: Tensor, var: Tensor },
    Dense { kernel: Var, bias: Var, activation: Activation },
}

/// Whether a forward pass trains (batch statistics, live dropout) or infers.
pub enum Mode<'a> {
    Train {
        rng: &'a mut ChaCha8Rng,
        /// Fold batch statistics into the running averages.
        update_stats: bool,
    },
    Eval,
}

#[derive(Debug)]
pub struct Head {
    plan: Vec<LayerSpec>,
    layers: Vec<Layer>,
    input_shape: [usize; 3],
}

fn glorot(fan_in: usize, fan_out: usize) -> Init {
    Init::Uniform {
        limit: (6.0 / (fan_in + fan_out) as f64).sqrt(),
    }
}

/// Upper bound on one unfolded input; larger batches are convolved in chunks.
const UNFOLD_BUDGET: usize = 128 << 20;

/// Stride-1 "same" convolution as an explicit unfold followed by a batched
/// matrix product. Numerically this is candle's `conv2d`, but the backward
/// pass is two matrix products and a scatter instead of candle's direct
/// transposed convolution, which is several times slower on CPU. Returns
/// (N, filters, H·W).
fn conv_same(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    let k = kernel.dim(2)?;
    conv_in_chunks(x, kernel, (UNFOLD_BUDGET / (c * k * k * h * w * 4).max(1)).max(1))
}

fn conv_in_chunks(x: &Tensor, kernel: &Tensor, chunk: usize) -> Result<Tensor> {
    let n = x.dim(0)?;
    let parts = (0..n)
        .step_by(chunk)
        .map(|s| unfold_conv(&x.narrow(0, s, chunk.min(n - s))?, kernel))
        .collect::<candle_core::Result<Vec<_>>>()?;
    Ok(if parts.len() == 1 {
        parts.into_iter().next().expect("one part")
    } else {
        Tensor::cat(&parts, 0)?
    })
}

/// (N, C, H, W) → (N, filters, H·W), before bias and activation.
fn unfold_conv(x: &Tensor, kernel: &Tensor) -> candle_core::Result<Tensor> {
    let (_, c, _, _) = x.dims4()?;
    let (filters, _, k, _) = kernel.dims4()?;
    let cols = im2col(x, k)?;
    // broadcast_matmul materializes the shared operand; a stride-0 batch
    // view fed straight to matmul gives wrong results on candle's CPU backend
    kernel.reshape((filters, c * k * k))?.broadcast_matmul(&cols)
}

impl Head {
    /// Builds a freshly initialized head over feature maps of `input_shape`
    /// (C, H, W).
    pub fn new(config: &HeadConfig, input_shape: [usize; 3], rng: &mut ChaCha8Rng, device: &Device) -> Result<Self> {
        let plan = head_layers(config, input_shape)?;
        let mut layers = Vec::with_capacity(plan.len());
        let mut shape: Vec<usize> = input_shape.to_vec();
        let var = |rng: &mut ChaCha8Rng, dims: &[usize], init: Init| -> Result<Var> {
            Ok(Var::from_tensor(&sample(rng, dims, init, device)?)?)
        };
        for spec in &plan {
            let layer = match spec.kind {
                LayerKind::Conv2d { filters, kernel } => {
                    let c = shape[0];
                    let k2 = kernel * kernel;
                    Layer::Conv {
                        kernel: var(rng, &[filters, c, kernel, kernel], glorot(k2 * c, k2 * filters))?,
                        bias: var(rng, &[filters], Init::Const(0.0))?,
                    }
                }
                LayerKind::MaxPool2d { size } => Layer::MaxPool { size },
                LayerKind::Dropout { rate } => Layer::Dropout { rate },
                LayerKind::Flatten => Layer::Flatten,
                LayerKind::BatchNorm => {
                    let n = shape[0];
                    Layer::BatchNorm {
                        gamma: var(rng, &[n], Init::Const(1.0))?,
                        beta: var(rng, &[n], Init::Const(0.0))?,
                        mean: Tensor::zeros(n, DType::F32, device)?,
                        var: Tensor::ones(n, DType::F32, device)?,
                    }
                }
                LayerKind::Dense { units, activation } => {
                    let n = shape[0];
                    Layer::Dense {
                        kernel: var(rng, &[n, units], glorot(n, units))?,
                        bias: var(rng, &[units], Init::Const(0.0))?,
                        activation,
                    }
                }
            };
            layers.push(layer);
            shape = spec.output_shape.clone();
        }
        Ok(Head {
            plan,
            layers,
            input_shape,
        })
    }

    pub fn plan(&self) -> &[LayerSpec] {
        &self.plan
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    /// Variables the optimizer updates.
    pub fn trainable(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv { kernel, bias } | Layer::Dense { kernel, bias, .. } => {
                    out.push(kernel.clone());
                    out.push(bias.clone());
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.clone());
                    out.push(beta.clone());
                }
                _ => {}
            }
        }
        out
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable().iter().map(|v| v.elem_count()).sum()
    }

    /// Class probabilities for a batch of feature maps (N, C, H, W).
    pub fn forward(&mut self, x: &Tensor, mut mode: Mode<'_>) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in self.layers.iter_mut() {
            h = match layer {
                Layer::Conv { kernel, bias } => {
                    let (_, _, rows, cols) = h.dims4()?;
                    bias_relu(&conv_same(&h, kernel.as_tensor())?, bias.as_tensor(), rows, cols)?
                }
                Layer::MaxPool { size: 2 } => max_pool2(&h)?,
                Layer::MaxPool { size } => h.max_pool2d(*size)?,
                Layer::Dropout { rate } => match &mut mode {
                    Mode::Train { rng, .. } if *rate > 0.0 => dropout(&h, *rate, rng)?,
                    _ => h,
                },
                Layer::Flatten => h.flatten_from(1)?,
                Layer::BatchNorm { gamma, beta, mean, var } => {
                    let (m, v) = match &mode {
                        Mode::Train { update_stats, .. } => {
                            let bm = h.mean(0)?;
                            let bv = h.broadcast_sub(&bm)?.sqr()?.mean(0)?;
                            if *update_stats {
                                *mean = ((&*mean * BN_MOMENTUM)? + (bm.detach() * (1.0 - BN_MOMENTUM))?)?;
                                *var = ((&*var * BN_MOMENTUM)? + (bv.detach() * (1.0 - BN_MOMENTUM))?)?;
                            }
                            (bm, bv)
                        }
                        Mode::Eval => (mean.clone(), var.clone()),
                    };
                    let norm = h.broadcast_sub(&m)?.broadcast_div(&(v + BN_EPS)?.sqrt()?)?;
                    norm.broadcast_mul(gamma.as_tensor())?.broadcast_add(beta.as_tensor())?
                }
                Layer::Dense { kernel, bias, activation } => {
                    let y = h.matmul(kernel.as_tensor())?.broadcast_add(bias.as_tensor())?;
                    match activation {
                        Activation::Relu => y.relu()?,
                        Activation::Softmax => softmax(&y)?,
                    }
                }
            };
        }
        Ok(h)
    }

    /// Every variable and running statistic, by stable name.
    pub fn state(&self) -> TensorMap {
        let mut map = TensorMap::new();
        for (i, l) in self.layers.iter().enumerate() {
            let mut put = |k: &str, t: &Tensor| {
                map.insert(format!("layers.{i:02}.{k}"), t.clone());
            };
            match l {
                Layer::Conv { kernel, bias } | Layer::Dense { kernel, bias, .. } => {
                    put("kernel", kernel.as_tensor());
                    put("bias", bias.as_tensor());
                }
                Layer::BatchNorm { gamma, beta, mean, var } => {
                    put("gamma", gamma.as_tensor());
                    put("beta", beta.as_tensor());
                    put("moving_mean", mean);
                    put("moving_variance", var);
                }
                _ => {}
            }
        }
        map
    }

    /// Overwrites every variable and running statistic from `state`, which
    /// must have exactly the names and shapes of [`Head::state`].
    pub fn load_state(&mut self, state: &HashMap<String, Tensor>) -> Result<()> {
        let current = self.state();
        if current.len() != state.len() {
            return Err(Error::Checkpoint(format!("head state has {} tensors, expected {}", state.len(), current.len())));
        }
        let get = |name: String, like: &Tensor| -> Result<Tensor> {
            let t = state.get(&name).ok_or_else(|| Error::Checkpoint(format!("head state lacks `{name}`")))?;
            if t.dims() != like.dims() {
                return Err(Error::Checkpoint(format!("`{name}` has shape {:?}, expected {:?}", t.dims(), like.dims())));
            }
            Ok(t.to_dtype(DType::F32)?.to_device(like.device())?)
        };
        for (i, l) in self.layers.iter_mut().enumerate() {
            let key = |k: &str| format!("layers.{i:02}.{k}");
            match l {
                Layer::Conv { kernel, bias } | Layer::Dense { kernel, bias, .. } => {
                    kernel.set(&get(key("kernel"), kernel.as_tensor())?)?;
                    bias.set(&get(key("bias"), bias.as_tensor())?)?;
                }
                Layer::BatchNorm { gamma, beta, mean, var } => {
                    gamma.set(&get(key("gamma"), gamma.as_tensor())?)?;
                    beta.set(&get(key("beta"), beta.as_tensor())?)?;
                    *mean = get(key("moving_mean"), mean)?;
                    *var = get(key("moving_variance"), var)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Deep copy of the current state, detached from later updates.
    pub fn snapshot(&self) -> Result<TensorMap> {
        let mut out = TensorMap::new();
        for (k, v) in self.state() {
            out.insert(k, v.copy()?);
        }
        Ok(out)
    }
}

/// Inverted dropout with a mask drawn from `rng`.
fn dropout(x: &Tensor, rate: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let keep = 1.0 - rate;
    let scale = (1.0 / keep) as f32;
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?;
    Ok(x.mul(&mask)?)
}
