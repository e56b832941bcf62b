//! Training, evaluation and reporting for frozen-backbone skin-lesion
//! classifiers on DermaMNIST and DermaMNIST-C.

pub mod download;
mod error;
pub mod experiment;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod plots;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
