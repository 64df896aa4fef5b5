//! Day-by-day closed-loop evaluation of forecasting methods.

use feeder_autodiff::Adapters;
use feeder_core::dispatch::{dispatch_step, simulate_day, BatteryState, DayInputs, DispatchOutcome};
use feeder_core::ingest::{BuildingSplit, Range};
use feeder_core::types::{BatteryParams, BuildingSeries, CostParams, HorizonSpec};
use feeder_core::valuation::{mae, mse};
use serde::{Deserialize, Serialize};

use crate::data::{window, Sample};
use crate::forecaster::Forecaster;
use crate::naive::{naive168, naive48};
use crate::{LearnError, Result};

/// Where forecasts come from.
#[derive(Debug, Clone, Copy)]
pub enum Method<'a> {
    Perfect,
    Naive48,
    Naive168,
    Model {
        forecaster: &'a Forecaster,
        adapters: Option<&'a Adapters>,
    },
}

/// Result of one billed day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayOutcome {
    pub building: u32,
    pub day: usize,
    pub c_ds: f64,
    pub c_imb: f64,
    pub c_total: f64,
    /// Forecast errors over the full forecast window.
    pub mae: f64,
    pub mse: f64,
    pub soe_start: f64,
}

/// State and bridge schedule entering one day, and the day's result.
#[derive(Debug, Clone)]
pub struct DaySim {
    pub state_at_anchor: BatteryState,
    pub bridge: Option<Vec<f64>>,
    pub outcome: DispatchOutcome,
}

/// Forecasts of `method` for each day.
pub fn method_forecasts(
    series: &BuildingSeries,
    days: &[usize],
    method: Method<'_>,
    horizon: &HorizonSpec,
) -> Result<Vec<Vec<f64>>> {
    let samples = days
        .iter()
        .map(|&d| {
            let anchor = horizon.anchor_for_day(d).ok_or(LearnError::InsufficientHistory {
                anchor: 0,
                lag: horizon.context_hours,
            })?;
            window(series, anchor, horizon)
        })
        .collect::<Result<Vec<Sample>>>()?;
    let values = series.prosumption();
    let h = horizon.forecast_hours;
    match method {
        Method::Perfect => Ok(samples.into_iter().map(|s| s.actual).collect()),
        Method::Naive48 => samples.iter().map(|s| naive48(values, s.anchor, h)).collect(),
        Method::Naive168 => samples.iter().map(|s| naive168(values, s.anchor, h)).collect(),
        Method::Model { forecaster, adapters } => {
            let ctx: Vec<&[f64]> = samples.iter().map(|s| s.context.as_slice()).collect();
            forecaster.predict(adapters, &ctx)
        }
    }
}

/// Runs consecutive days in closed loop. The battery starts at `e_init` on
/// the first day and after any gap in `days`; the bridge hours of such days
/// are left idle.
pub fn simulate_sequence(
    series: &BuildingSeries,
    days: &[usize],
    forecasts: &[Vec<f64>],
    battery: &BatteryParams,
    cost: &CostParams,
    horizon: &HorizonSpec,
) -> Result<Vec<DaySim>> {
    if forecasts.len() != days.len() {
        return Err(LearnError::Length {
            what: "forecasts",
            got: forecasts.len(),
            expected: days.len(),
        });
    }
    let values = series.prosumption();
    let mut out: Vec<DaySim> = Vec::with_capacity(days.len());
    for (i, (&d, f)) in days.iter().zip(forecasts).enumerate() {
        let anchor = horizon.anchor_for_day(d).ok_or(LearnError::InsufficientHistory {
            anchor: 0,
            lag: horizon.context_hours,
        })?;
        if anchor + horizon.forecast_hours > values.len() {
            return Err(LearnError::PastEnd {
                anchor,
                hours: horizon.forecast_hours,
                len: values.len(),
            });
        }
        let (state, bridge) = match out.last() {
            Some(prev) if i > 0 && days[i - 1] + 1 == d => (
                prev.outcome.state_at_next_anchor,
                Some(prev.outcome.next_bridge.clone()).filter(|b| b.len() == horizon.schedule_start_offset),
            ),
            _ => (BatteryState::new(battery.e_init), None),
        };
        let outcome = simulate_day(
            DayInputs {
                forecast: f,
                actual: &values[anchor..anchor + horizon.forecast_hours],
                state_at_anchor: state,
                bridge_schedule: bridge.as_deref(),
            },
            battery,
            cost,
            horizon,
        )?;
        out.push(DaySim {
            state_at_anchor: state,
            bridge,
            outcome,
        });
    }
    Ok(out)
}

/// Closed-loop outcomes of `method` on one building over `range`.
pub fn evaluate_building(
    split: &BuildingSplit,
    range: Range,
    method: Method<'_>,
    battery: &BatteryParams,
    cost: &CostParams,
    horizon: &HorizonSpec,
) -> Result<Vec<DayOutcome>> {
    let days = split.days(range);
    let forecasts = method_forecasts(&split.series, days, method, horizon)?;
    let sims = simulate_sequence(&split.series, days, &forecasts, battery, cost, horizon)?;
    let values = split.series.prosumption();
    days.iter()
        .zip(&forecasts)
        .zip(sims)
        .map(|((&d, f), sim)| {
            let anchor = horizon.anchor_for_day(d).expect("checked by simulate_sequence");
            let actual = &values[anchor..anchor + horizon.forecast_hours];
            let c = &sim.outcome.cost;
            Ok(DayOutcome {
                building: split.building_id(),
                day: d,
                c_ds: c.c_ds,
                c_imb: c.c_imb,
                c_total: c.c_total,
                mae: mae(actual, f).expect("equal lengths"),
                mse: mse(actual, f).expect("equal lengths"),
                soe_start: sim.outcome.energy_at_schedule_start(),
            })
        })
        .collect()
}

/// Estimated state of energy at each schedule start, as known at the anchor.
///
/// The battery runs in closed loop on schedules built from
/// `schedule_forecasts`. At each anchor, the state is rolled forward over the
/// bridge hours using `state_forecasts` in place of the unknown loads.
pub fn estimate_soe(
    series: &BuildingSeries,
    days: &[usize],
    schedule_forecasts: &[Vec<f64>],
    state_forecasts: &[Vec<f64>],
    battery: &BatteryParams,
    cost: &CostParams,
    horizon: &HorizonSpec,
) -> Result<Vec<f64>> {
    let sims = simulate_sequence(series, days, schedule_forecasts, battery, cost, horizon)?;
    sims.iter()
        .zip(state_forecasts)
        .map(|(sim, f)| {
            let mut state = sim.state_at_anchor;
            for (h, &load) in f.iter().take(horizon.schedule_start_offset).enumerate() {
                let scheduled = sim.bridge.as_ref().map_or(load, |b| b[h]);
                state = dispatch_step(scheduled, load, state, battery)?.new_state;
            }
            Ok(state.energy)
        })
        .collect()
}

/// Mean MAE and MSE of a model over samples.
pub fn forecast_errors(forecaster: &Forecaster, adapters: Option<&Adapters>, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(LearnError::Empty("evaluation samples"));
    }
    let ctx: Vec<&[f64]> = samples.iter().map(|s| s.context.as_slice()).collect();
    let preds = forecaster.predict(adapters, &ctx)?;
    let (mut a, mut s) = (0.0, 0.0);
    for (p, smp) in preds.iter().zip(samples) {
        a += mae(&smp.actual, p).expect("equal lengths");
        s += mse(&smp.actual, p).expect("equal lengths");
    }
    let n = samples.len() as f64;
    Ok((a / n, s / n))
}

/// Averages of daily outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cost: f64,
    pub mae: f64,
    pub mse: f64,
    pub n_days: usize,
}

pub fn summarize(outcomes: &[DayOutcome]) -> Result<Summary> {
    if outcomes.is_empty() {
        return Err(LearnError::Empty("outcomes"));
    }
    let n = outcomes.len() as f64;
    Ok(Summary {
        cost: outcomes.iter().map(|o| o.c_total).sum::<f64>() / n,
        mae: outcomes.iter().map(|o| o.mae).sum::<f64>() / n,
        mse: outcomes.iter().map(|o| o.mse).sum::<f64>() / n,
        n_days: outcomes.len(),
    })
}
