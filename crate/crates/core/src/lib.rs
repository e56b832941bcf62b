//! Allocation-only core of the dermabench harness.
//!
//! Everything here is a pure function over in-memory data: the seven lesion
//! labels, dataset descriptors and in-memory splits, pixel preprocessing,
//! stratified sampling, class weights, the categorical cross-entropy and
//! early-stopping rules used by the trainer, the classification metrics, the
//! declarative model configurations, and the text/CSV result tables.
//!
//! File formats, networks, plotting and the command line live in the
//! `dermabench` crate, which builds on this one.

#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod early_stop;
mod error;
pub mod label;
pub mod loss;
pub mod metrics;
pub mod preprocess;
pub mod report;
pub mod sampling;
pub mod zoo;

pub use dataset::{CountCheck, DatasetBundle, DatasetDescriptor, DatasetKind, LabeledImage, Split};
pub use early_stop::{early_stop_update, EarlyStopState, StopDecision};
pub use error::{Error, Result};
pub use label::{one_hot, ClassLabel, NUM_CLASSES};
pub use loss::cross_entropy;
pub use metrics::{AggregationMode, ConfusionMatrix, MetricsReport, ScoredSample};
pub use preprocess::{Interpolation, Normalization};
pub use sampling::{compute_class_weights, stratified_subsample, ClassWeights};
pub use zoo::{named_configs, BackboneKind, HeadConfig, HeadVariant, ModelConfig, ModelName};
