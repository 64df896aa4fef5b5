//! Min-max scaling of model inputs and targets.

use serde::{Deserialize, Serialize};

use crate::{LearnError, Result};

/// Maps `[min, max]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
}

impl MinMaxScaler {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, v) in values.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(LearnError::NonFinite { what: "scaler input", index: i });
            }
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            return Err(LearnError::Empty("scaler input"));
        }
        Ok(Self { min, max })
    }

    /// Width of the fitted range, never below a small floor.
    pub fn span(&self) -> f64 {
        (self.max - self.min).max(1e-9)
    }

    pub fn transform(&self, v: f64) -> f64 {
        (v - self.min) / self.span()
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.span() + self.min
    }
}

/// Inference-time bound on scaled exogenous inputs.
pub const CLAMP: (f64, f64) = (-0.5, 1.5);

pub fn clamp_scaled(v: f64) -> f64 {
    v.clamp(CLAMP.0, CLAMP.1)
}
