//! Dataset descriptors and in-memory splits.
//!
//! A [`Split`] stores its images contiguously as `N × side × side × 3`
//! unsigned bytes (row-major, channels last), mirroring the archive layout,
//! so a split of DermaMNIST-C at 224 pixels is a single 1.2 GB buffer rather
//! than eight thousand small allocations.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::label::{ClassLabel, NUM_CLASSES};
use crate::preprocess::Interpolation;
use crate::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "DermaMNIST")]
    DermaMnist,
    #[serde(rename = "DermaMNIST-C")]
    DermaMnistC,
    /// Generated stand-in data with the same layout; used for dry runs and tests.
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::DermaMnist => "DermaMNIST",
            DatasetKind::DermaMnistC => "DermaMNIST-C",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "DermaMNIST" | "dermamnist" => Ok(DatasetKind::DermaMnist),
            "DermaMNIST-C" | "dermamnist-c" | "dermamnist_c" => Ok(DatasetKind::DermaMnistC),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

/// How loaded split sizes are checked against a descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountCheck {
    /// (train, validation, test) must match exactly.
    Exact([usize; 3]),
    /// The total must match exactly and each split's share must be within
    /// `tolerance` (absolute fraction) of `percent / 100`.
    Ratio {
        total: usize,
        percent: [u32; 3],
        tolerance: f64,
    },
}

impl CountCheck {
    pub fn check(&self, counts: [usize; 3]) -> Result<()> {
        match self {
            CountCheck::Exact(expected) => {
                for ((name, &want), &got) in SplitName::ALL.iter().zip(expected).zip(&counts) {
                    if want != got {
                        return Err(Error::Integrity {
                            split: name.as_str(),
                            expected: want,
                            actual: got,
                        });
                    }
                }
                Ok(())
            }
            CountCheck::Ratio {
                total,
                percent,
                tolerance,
            } => {
                let got: usize = counts.iter().sum();
                if got != *total {
                    return Err(Error::Integrity {
                        split: "all",
                        expected: *total,
                        actual: got,
                    });
                }
                for ((name, &pct), &n) in SplitName::ALL.iter().zip(percent).zip(&counts) {
                    let share = n as f64 / got as f64;
                    let want = pct as f64 / 100.0;
                    if (share - want).abs() > *tolerance {
                        return Err(Error::Corruption(format!(
                            "{} split holds {:.4} of the images, expected {:.2} ± {}",
                            name.as_str(),
                            share,
                            want,
                            tolerance
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Name, native resolution and expected split sizes of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetDescriptor {
    pub name: DatasetKind,
    pub resolution: usize,
    pub expected_counts: CountCheck,
    pub class_count: usize,
}

impl DatasetDescriptor {
    /// 28×28 DermaMNIST; 10,015 images split 70:10:20 as shipped in the archive.
    pub fn derma_mnist() -> Self {
        DatasetDescriptor {
            name: DatasetKind::DermaMnist,
            resolution: 28,
            expected_counts: CountCheck::Ratio {
                total: 10_015,
                percent: [70, 10, 20],
                tolerance: 0.01,
            },
            class_count: NUM_CLASSES,
        }
    }

    /// 224×224 DermaMNIST-C with its deduplicated splits.
    pub fn derma_mnist_c() -> Self {
        DatasetDescriptor {
            name: DatasetKind::DermaMnistC,
            resolution: 224,
            expected_counts: CountCheck::Exact([8208, 575, 1232]),
            class_count: NUM_CLASSES,
        }
    }

    pub fn synthetic(resolution: usize, counts: [usize; 3]) -> Self {
        DatasetDescriptor {
            name: DatasetKind::Synthetic,
            resolution,
            expected_counts: CountCheck::Exact(counts),
            class_count: NUM_CLASSES,
        }
    }

    pub fn named(kind: DatasetKind) -> Result<Self> {
        match kind {
            DatasetKind::DermaMnist => Ok(Self::derma_mnist()),
            DatasetKind::DermaMnistC => Ok(Self::derma_mnist_c()),
            DatasetKind::Synthetic => Err(Error::Config(
                "a synthetic dataset needs an explicit resolution and split sizes".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count != NUM_CLASSES {
            return Err(Error::Config(format!(
                "class_count must be {NUM_CLASSES}, got {}",
                self.class_count
            )));
        }
        if self.resolution == 0 {
            return Err(Error::Config("resolution must be positive".into()));
        }
        let canonical = match self.name {
            DatasetKind::DermaMnist => Some(Self::derma_mnist()),
            DatasetKind::DermaMnistC => Some(Self::derma_mnist_c()),
            DatasetKind::Synthetic => None,
        };
        match canonical {
            Some(c) if c != *self => Err(Error::Config(format!(
                "{} descriptor does not match the published dataset",
                self.name
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DescriptorRepr {
    Name(DatasetKind),
    Full {
        name: DatasetKind,
        resolution: usize,
        expected_counts: CountCheck,
        #[serde(default = "default_class_count")]
        class_count: usize,
    },
}

fn default_class_count() -> usize {
    NUM_CLASSES
}

// Config files may name a published dataset instead of spelling out its descriptor.
impl<'de> Deserialize<'de> for DatasetDescriptor {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        match DescriptorRepr::deserialize(deserializer)? {
            DescriptorRepr::Name(kind) => Self::named(kind).map_err(serde::de::Error::custom),
            DescriptorRepr::Full {
                name,
                resolution,
                expected_counts,
                class_count,
            } => Ok(DatasetDescriptor {
                name,
                resolution,
                expected_counts,
                class_count,
            }),
        }
    }
}

/// One owned RGB image and its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    side: usize,
    pixels: Vec<u8>,
    label: ClassLabel,
}

impl LabeledImage {
    pub fn new(side: usize, pixels: Vec<u8>, label: ClassLabel) -> Result<Self> {
        if side == 0 || pixels.len() != side * side * CHANNELS {
            return Err(Error::Contract(format!(
                "image of side {side} needs {} bytes, got {}",
                side * side * CHANNELS,
                pixels.len()
            )));
        }
        Ok(LabeledImage { side, pixels, label })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn label(&self) -> ClassLabel {
        self.label
    }
}

/// A list of same-sized images stored contiguously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    side: usize,
    pixels: Vec<u8>,
    labels: Vec<ClassLabel>,
}

impl Split {
    pub fn new(side: usize, pixels: Vec<u8>, labels: Vec<ClassLabel>) -> Result<Self> {
        let stride = side * side * CHANNELS;
        if side == 0 || pixels.len() != labels.len() * stride {
            return Err(Error::Contract(format!(
                "{} labels of side {side} need {} bytes, got {}",
                labels.len(),
                labels.len() * stride,
                pixels.len()
            )));
        }
        Ok(Split { side, pixels, labels })
    }

    pub fn from_images(side: usize, images: &[LabeledImage]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(images.len() * side * side * CHANNELS);
        let mut labels = Vec::with_capacity(images.len());
        for img in images {
            if img.side != side {
                return Err(Error::Contract(format!(
                    "mixed image sizes in one split: {} vs {side}",
                    img.side
                )));
            }
            pixels.extend_from_slice(&img.pixels);
            labels.push(img.label);
        }
        Split::new(side, pixels, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn image_len(&self) -> usize {
        self.side * self.side * CHANNELS
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> ClassLabel {
        self.labels[i]
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, i: usize) -> LabeledImage {
        LabeledImage {
            side: self.side,
            pixels: self.image(i).to_vec(),
            label: self.labels[i],
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&[u8], ClassLabel)> + '_ {
        self.pixels
            .chunks_exact(self.image_len())
            .zip(self.labels.iter().copied())
    }

    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for l in &self.labels {
            h[l.index()] += 1;
        }
        h
    }

    /// New split holding the images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Split {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Split {
            side: self.side,
            pixels,
            labels,
        }
    }

    pub(crate) fn map_images(&self, side: usize, mut f: impl FnMut(&[u8]) -> Vec<u8>) -> Split {
        let mut pixels = Vec::with_capacity(self.len() * side * side * CHANNELS);
        for img in self.pixels.chunks_exact(self.image_len()) {
            pixels.extend_from_slice(&f(img));
        }
        Split {
            side,
            pixels,
            labels: self.labels.clone(),
        }
    }
}

/// A transformation applied to a bundle after loading, kept for run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Transform {
    Subsample { fraction: f64, seed: u64 },
    Resize { side: usize, interpolation: Interpolation },
}

/// Train/validation/test splits of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    descriptor: DatasetDescriptor,
    train: Split,
    validation: Split,
    test: Split,
    transforms: Vec<Transform>,
}

impl DatasetBundle {
    /// Checks the freshly loaded splits against the descriptor: split sizes,
    /// image resolution, and that every class occurs in the training split.
    pub fn new(descriptor: DatasetDescriptor, train: Split, validation: Split, test: Split) -> Result<Self> {
        descriptor.validate()?;
        descriptor
            .expected_counts
            .check([train.len(), validation.len(), test.len()])?;
        for (name, split) in SplitName::ALL.iter().zip([&train, &validation, &test]) {
            if split.side != descriptor.resolution {
                return Err(Error::Corruption(format!(
                    "{} images are {}×{}, {} expects {}×{}",
                    name.as_str(),
                    split.side,
                    split.side,
                    descriptor.name,
                    descriptor.resolution,
                    descriptor.resolution
                )));
            }
        }
        let hist = train.class_histogram();
        if let Some(c) = ClassLabel::ALL.into_iter().find(|c| hist[c.index()] == 0) {
            return Err(Error::Corruption(format!("class {c} missing from the training split")));
        }
        Ok(DatasetBundle {
            descriptor,
            train,
            validation,
            test,
            transforms: Vec::new(),
        })
    }

    pub(crate) fn derive(&self, train: Split, validation: Split, test: Split, transform: Transform) -> Self {
        let mut transforms = self.transforms.clone();
        transforms.push(transform);
        DatasetBundle {
            descriptor: self.descriptor.clone(),
            train,
            validation,
            test,
            transforms,
        }
    }

    pub fn descriptor(&self) -> &DatasetDescriptor {
        &self.descriptor
    }

    pub fn train(&self) -> &Split {
        &self.train
    }

    pub fn validation(&self) -> &Split {
        &self.validation
    }

    pub fn test(&self) -> &Split {
        &self.test
    }

    pub fn split(&self, name: SplitName) -> &Split {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.train.len(), self.validation.len(), self.test.len()]
    }

    /// Current image side; equals the descriptor resolution unless resized.
    pub fn side(&self) -> usize {
        self.train.side
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn summary(&self) -> String {
        let [a, b, c] = self.counts();
        format!(
            "{} ({}×{}): train {a}, validation {b}, test {c}",
            self.descriptor.name,
            self.side(),
            self.side()
        )
    }
}
