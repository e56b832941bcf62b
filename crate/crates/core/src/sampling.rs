//! Class weights and seeded stratified subsampling.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetBundle, Split, SplitName, Transform};
use crate::label::{ClassLabel, NUM_CLASSES};
use crate::{Error, Result};

/// Per-class loss multipliers, indexed by class code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; NUM_CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights([1.0; NUM_CLASSES])
    }

    pub fn get(&self, label: ClassLabel) -> f64 {
        self.0[label.index()]
    }

    pub fn validate(&self) -> Result<()> {
        match self.0.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            Some(i) => Err(Error::Config(format!(
                "class weight for {} must be positive and finite, got {}",
                ClassLabel::ALL[i],
                self.0[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Inverse-frequency weights `N / (K · n_c)` with `K = 7`, so that
/// `Σ n_c · w_c = N`.
pub fn compute_class_weights(train: &Split) -> Result<ClassWeights> {
    weights_from_counts(&train.class_histogram()).map(|w| {
        let mut out = [0.0; NUM_CLASSES];
        out.copy_from_slice(&w);
        ClassWeights(out)
    })
}

/// The same formula for an arbitrary number of classes.
pub fn weights_from_counts(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            if n == 0 {
                Err(Error::EmptyClass {
                    class: ClassLabel::ALL.get(i).map_or("?", |c| c.name()),
                    what: "its class weight",
                })
            } else {
                Ok(total as f64 / (k * n as f64))
            }
        })
        .collect()
}

/// Keeps `round(fraction · n_c)` images of every class in every split,
/// chosen by a seeded shuffle and returned in their original order.
pub fn stratified_subsample(bundle: &DatasetBundle, fraction: f64, seed: u64) -> Result<DatasetBundle> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("subsample fraction {fraction} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = |name: SplitName| -> Result<Split> {
        let split = bundle.split(name);
        let mut keep = Vec::new();
        for class in ClassLabel::ALL {
            let mut members: Vec<usize> = (0..split.len()).filter(|&i| split.label(i) == class).collect();
            if members.is_empty() {
                continue;
            }
            let take = libm::round(fraction * members.len() as f64) as usize;
            if take == 0 {
                return Err(Error::Config(format!(
                    "fraction {fraction} removes every {class} image from the {} split ({} available)",
                    name.as_str(),
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            keep.extend_from_slice(&members[..take]);
        }
        keep.sort_unstable();
        Ok(split.select(&keep))
    };
    let train = run(SplitName::Train)?;
    let validation = run(SplitName::Validation)?;
    let test = run(SplitName::Test)?;
    Ok(bundle.derive(train, validation, test, Transform::Subsample { fraction, seed }))
}
