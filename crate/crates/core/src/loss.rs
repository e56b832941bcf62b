//! Categorical cross-entropy on probability vectors.

use alloc::format;

use crate::label::NUM_CLASSES;
use crate::{Error, Result};

/// Probabilities are clamped to this floor before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-7;

/// `-w · ln(max(p[target], 1e-7))` for a softmax output `predicted` and a
/// one-hot `target`; `weight` defaults to 1.
pub fn cross_entropy(predicted: &[f64; NUM_CLASSES], target: &[f64; NUM_CLASSES], weight: Option<f64>) -> Result<f64> {
    let sum: f64 = predicted.iter().sum();
    if predicted.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!(
            "predicted vector is not a probability distribution (sum {sum})"
        )));
    }
    let hot = target.iter().position(|&t| t == 1.0);
    let zeros = target.iter().filter(|&&t| t == 0.0).count();
    let class = match hot {
        Some(i) if zeros == NUM_CLASSES - 1 => i,
        _ => return Err(Error::Contract("target is not one-hot".into())),
    };
    let w = weight.unwrap_or(1.0);
    if !(w.is_finite() && w > 0.0) {
        return Err(Error::Contract(format!("loss weight must be positive, got {w}")));
    }
    Ok(-w * libm::log(predicted[class].max(PROB_FLOOR)))
}
