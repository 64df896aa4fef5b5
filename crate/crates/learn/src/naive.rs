//! Seasonal-naive benchmark forecasters.

use crate::{LearnError, Result};

/// Repeats the values observed `lag` hours before each forecast hour:
/// `forecast[h] = series[anchor - lag + h]`.
pub fn naive(series: &[f64], anchor: usize, lag: usize, hours: usize) -> Result<Vec<f64>> {
    if lag < hours || anchor < lag {
        return Err(LearnError::InsufficientHistory { anchor, lag });
    }
    if anchor > series.len() {
        return Err(LearnError::PastEnd {
            anchor,
            hours: 0,
            len: series.len(),
        });
    }
    Ok(series[anchor - lag..anchor - lag + hours].to_vec())
}

/// Forecast equal to the values two days earlier.
pub fn naive48(series: &[f64], anchor: usize, hours: usize) -> Result<Vec<f64>> {
    naive(series, anchor, 48, hours)
}

/// Forecast equal to the values one week earlier.
pub fn naive168(series: &[f64], anchor: usize, hours: usize) -> Result<Vec<f64>> {
    naive(series, anchor, 168, hours)
}
