//! Named parameter storage, seeded initialization and content digests.

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub type TensorMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    /// Uniform on `[-limit, limit]`.
    Uniform { limit: f64 },
    Const(f32),
}

/// Where backbone tensors come from while an architecture is being assembled.
pub(crate) trait ParamSource {
    fn take(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor>;
}

/// Tensors looked up by name in a loaded weights file.
pub(crate) struct FromMap<'a> {
    pub map: &'a HashMap<String, Tensor>,
    pub device: &'a Device,
}

impl ParamSource for FromMap<'_> {
    fn take(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Tensor> {
        let t = self
            .map
            .get(name)
            .ok_or_else(|| Error::Build(format!("weights file lacks tensor `{name}`")))?;
        if t.dims() != shape {
            return Err(Error::Build(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.dims()
            )));
        }
        Ok(t.to_dtype(DType::F32)?.to_device(self.device)?)
    }
}

/// Seeded random tensors, for running without downloaded weights.
pub(crate) struct Seeded<'a> {
    pub rng: ChaCha8Rng,
    pub device: &'a Device,
}

impl<'a> Seeded<'a> {
    pub fn new(seed: u64, device: &'a Device) -> Self {
        Seeded {
            rng: ChaCha8Rng::seed_from_u64(seed),
            device,
        }
    }
}

impl ParamSource for Seeded<'_> {
    fn take(&mut self, _name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        Ok(sample(&mut self.rng, shape, init, self.device)?)
    }
}

pub(crate) fn sample(rng: &mut ChaCha8Rng, shape: &[usize], init: Init, device: &Device) -> candle_core::Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = match init {
        Init::Const(v) => vec![v; n],
        Init::HeNormal { fan_in } => {
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32)
                .collect()
        }
        Init::Uniform { limit } => (0..n).map(|_| rng.random_range(-limit..=limit) as f32).collect(),
    };
    Tensor::from_vec(data, shape, device)
}

/// SHA-256 over every tensor's name, shape and little-endian f32 values,
/// in name order.
pub fn digest(map: &TensorMap) -> Result<String> {
    let mut h = Sha256::new();
    for (name, t) in map {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.rank() as u64).to_le_bytes());
        for d in t.dims() {
            h.update((*d as u64).to_le_bytes());
        }
        let values = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
