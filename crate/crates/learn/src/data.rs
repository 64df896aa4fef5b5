//! Forecast windows cut from building series.

use feeder_core::ingest::{BuildingSplit, Range};
use feeder_core::types::{BuildingSeries, HorizonSpec, HOURS_PER_DAY};

use crate::{LearnError, Result};

/// One forecast issued at `anchor`: the preceding context and the actual
/// prosumption over the forecast window.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub building: u32,
    /// Day whose schedule the forecast feeds.
    pub day: usize,
    pub anchor: usize,
    pub context: Vec<f64>,
    pub actual: Vec<f64>,
}

pub fn window(series: &BuildingSeries, anchor: usize, horizon: &HorizonSpec) -> Result<Sample> {
    let values = series.prosumption();
    if anchor < horizon.context_hours {
        return Err(LearnError::InsufficientHistory {
            anchor,
            lag: horizon.context_hours,
        });
    }
    if anchor + horizon.forecast_hours > values.len() {
        return Err(LearnError::PastEnd {
            anchor,
            hours: horizon.forecast_hours,
            len: values.len(),
        });
    }
    Ok(Sample {
        building: series.building_id(),
        day: (anchor + horizon.schedule_start_offset) / HOURS_PER_DAY,
        anchor,
        context: values[anchor - horizon.context_hours..anchor].to_vec(),
        actual: values[anchor..anchor + horizon.forecast_hours].to_vec(),
    })
}

/// Samples for every usable day of `range`.
pub fn day_samples(split: &BuildingSplit, range: Range, horizon: &HorizonSpec) -> Result<Vec<Sample>> {
    split
        .days(range)
        .iter()
        .map(|&d| {
            let anchor = horizon
                .anchor_for_day(d)
                .ok_or(LearnError::InsufficientHistory { anchor: 0, lag: horizon.context_hours })?;
            window(&split.series, anchor, horizon)
        })
        .collect()
}

/// Samples over a list of buildings, in building order.
pub fn pooled_samples(splits: &[&BuildingSplit], range: Range, horizon: &HorizonSpec) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for s in splits {
        out.extend(day_samples(s, range, horizon)?);
    }
    Ok(out)
}

/// Windows anchored at the forecast hour of day, every `stride` hours.
pub fn strided_samples(series: &BuildingSeries, horizon: &HorizonSpec, stride: usize) -> Vec<Sample> {
    let phase = (HOURS_PER_DAY - horizon.schedule_start_offset % HOURS_PER_DAY) % HOURS_PER_DAY;
    let mut anchor = horizon.context_hours + (phase + HOURS_PER_DAY - horizon.context_hours % HOURS_PER_DAY) % HOURS_PER_DAY;
    let mut out = Vec::new();
    while anchor + horizon.forecast_hours <= series.len() {
        out.push(window(series, anchor, horizon).expect("bounds checked"));
        anchor += stride.max(1);
    }
    out
}
