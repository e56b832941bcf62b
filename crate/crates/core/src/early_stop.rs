//! Patience-based early stopping on a monitored quantity (lower is better).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    /// Best value seen so far; `+inf` before the first observation.
    pub best: f64,
    pub epochs_since_best: u32,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        EarlyStopState {
            best: f64::INFINITY,
            epochs_since_best: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDecision {
    /// Strict improvement; the new value is the best so far.
    Improved,
    Continue,
    Stop,
}

/// Only a strictly smaller value counts as an improvement. Stops once
/// `patience` consecutive observations failed to improve.
pub fn early_stop_update(state: EarlyStopState, value: f64, patience: u32) -> (EarlyStopState, StopDecision) {
    debug_assert!(patience >= 1);
    if value < state.best {
        let next = EarlyStopState {
            best: value,
            epochs_since_best: 0,
        };
        return (next, StopDecision::Improved);
    }
    let since = state.epochs_since_best + 1;
    let next = EarlyStopState {
        best: state.best,
        epochs_since_best: since,
    };
    let decision = if since >= patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    };
    (next, decision)
}
