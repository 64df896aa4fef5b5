//! Shared domain types and unit conventions.
//!
//! Power is in kW, energy in kWh and money in €. Prosumption is positive for
//! net consumption; battery power is positive when charging.

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length of one time step in hours.
pub const DT_HOURS: f64 = 1.0;

pub const HOURS_PER_DAY: usize = 24;

/// First hour of the Ausgrid solar-home dataset; synthetic corpora use it too.
pub fn default_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2010, 7, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time")
}

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("building {building}: series `{name}` has length {got}, expected {expected}")]
    LengthMismatch {
        building: u32,
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("building {building}: non-finite value in `{name}` at hour {index}")]
    NonFinite {
        building: u32,
        name: &'static str,
        index: usize,
    },
    #[error("building {building}: prosumption at hour {index} is {got}, load - pv is {expected}")]
    Inconsistent {
        building: u32,
        index: usize,
        got: f64,
        expected: f64,
    },
}

/// A point on the uniform hourly grid of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimePoint {
    pub index: usize,
    pub timestamp: NaiveDateTime,
}

impl TimePoint {
    pub fn from_index(epoch: NaiveDateTime, index: usize) -> Self {
        Self {
            index,
            timestamp: epoch + Duration::hours(index as i64),
        }
    }

    pub fn hour_of_day(&self) -> u32 {
        self.timestamp.hour()
    }
}

/// One building's hourly prosumption aligned to an hourly grid starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingSeries {
    building_id: u32,
    start: NaiveDateTime,
    prosumption: Vec<f64>,
    load: Option<Vec<f64>>,
    pv: Option<Vec<f64>>,
}

impl BuildingSeries {
    /// Builds a series from load and PV channels; prosumption is derived as `load - pv`.
    pub fn from_components(
        building_id: u32,
        start: NaiveDateTime,
        load: Vec<f64>,
        pv: Vec<f64>,
    ) -> Result<Self, SeriesError> {
        if pv.len() != load.len() {
            return Err(SeriesError::LengthMismatch {
                building: building_id,
                name: "pv",
                got: pv.len(),
                expected: load.len(),
            });
        }
        let prosumption = load.iter().zip(&pv).map(|(l, p)| l - p).collect();
        Self::new(building_id, start, prosumption, Some(load), Some(pv))
    }

    pub fn from_prosumption(
        building_id: u32,
        start: NaiveDateTime,
        prosumption: Vec<f64>,
    ) -> Result<Self, SeriesError> {
        Self::new(building_id, start, prosumption, None, None)
    }

    pub fn new(
        building_id: u32,
        start: NaiveDateTime,
        prosumption: Vec<f64>,
        load: Option<Vec<f64>>,
        pv: Option<Vec<f64>>,
    ) -> Result<Self, SeriesError> {
        let n = prosumption.len();
        check_finite(building_id, "prosumption", &prosumption)?;
        for (name, channel) in [("load", &load), ("pv", &pv)] {
            if let Some(values) = channel {
                if values.len() != n {
                    return Err(SeriesError::LengthMismatch {
                        building: building_id,
                        name,
                        got: values.len(),
                        expected: n,
                    });
                }
                check_finite(building_id, name, values)?;
            }
        }
        if let (Some(l), Some(p)) = (&load, &pv) {
            for i in 0..n {
                let expected = l[i] - p[i];
                if (prosumption[i] - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
                    return Err(SeriesError::Inconsistent {
                        building: building_id,
                        index: i,
                        got: prosumption[i],
                        expected,
                    });
                }
            }
        }
        Ok(Self {
            building_id,
            start,
            prosumption,
            load,
            pv,
        })
    }

    pub fn building_id(&self) -> u32 {
        self.building_id
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn prosumption(&self) -> &[f64] {
        &self.prosumption
    }

    pub fn load(&self) -> Option<&[f64]> {
        self.load.as_deref()
    }

    pub fn pv(&self) -> Option<&[f64]> {
        self.pv.as_deref()
    }

    pub fn len(&self) -> usize {
        self.prosumption.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prosumption.is_empty()
    }

    pub fn time_point(&self, index: usize) -> TimePoint {
        TimePoint::from_index(self.start, index)
    }

    /// Number of complete days covered by the series.
    pub fn n_days(&self) -> usize {
        self.len() / HOURS_PER_DAY
    }
}

fn check_finite(building: u32, name: &'static str, values: &[f64]) -> Result<(), SeriesError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(SeriesError::NonFinite {
            building,
            name,
            index,
        }),
        None => Ok(()),
    }
}

/// Battery limits and loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatteryParams {
    /// Maximum discharge power (negative), kW.
    pub p_min: f64,
    /// Maximum charge power, kW.
    pub p_max: f64,
    pub e_min: f64,
    pub e_max: f64,
    /// Loss coefficient applied to both charge and discharge.
    pub mu: f64,
    /// State of energy on the first simulated day, kWh.
    pub e_init: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            p_min: -5.0,
            p_max: 5.0,
            e_min: 0.0,
            e_max: 13.5,
            mu: 0.05,
            e_init: 6.75,
        }
    }
}

/// Coefficients of the schedule and imbalance cost functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub cq_plus: f64,
    pub cl_plus: f64,
    pub cq_minus: f64,
    pub cl_minus: f64,
    pub cq_delta: f64,
    pub cl_delta: f64,
    /// Weight of imbalance costs in the total.
    pub alpha: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            cq_plus: 0.05,
            cl_plus: 0.3,
            cq_minus: 0.05,
            cl_minus: 0.15,
            cq_delta: 0.05,
            cl_delta: 0.3,
            alpha: 10.0,
        }
    }
}

/// Timing of forecasts and schedules relative to the daily anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HorizonSpec {
    pub context_hours: usize,
    pub forecast_hours: usize,
    /// Hour of day at which forecasts are issued.
    pub anchor_hour: usize,
    pub schedule_steps: usize,
    /// Hours between the anchor and the first scheduled step.
    pub schedule_start_offset: usize,
}

impl Default for HorizonSpec {
    fn default() -> Self {
        Self {
            context_hours: 168,
            forecast_hours: 42,
            anchor_hour: 12,
            schedule_steps: 30,
            schedule_start_offset: 12,
        }
    }
}

impl HorizonSpec {
    /// Hour index of the forecast anchor for the day whose schedule starts at `day`'s midnight.
    pub fn anchor_for_day(&self, day: usize) -> Option<usize> {
        (day * HOURS_PER_DAY).checked_sub(self.schedule_start_offset)
    }

    /// Whether a series of `len` hours provides context and the full forecast window for `day`.
    pub fn day_is_usable(&self, day: usize, len: usize) -> bool {
        match self.anchor_for_day(day) {
            Some(anchor) => anchor >= self.context_hours && anchor + self.forecast_hours <= len,
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_parameter_table() {
        let b = BatteryParams::default();
        assert_eq!(
            (b.p_min, b.p_max, b.e_min, b.e_max, b.mu, b.e_init),
            (-5.0, 5.0, 0.0, 13.5, 0.05, 6.75)
        );
        let c = CostParams::default();
        assert_eq!(
            (c.cq_plus, c.cl_plus, c.cq_minus, c.cl_minus),
            (0.05, 0.3, 0.05, 0.15)
        );
        assert_eq!((c.cq_delta, c.cl_delta, c.alpha), (0.05, 0.3, 10.0));
    }

    #[test]
    fn time_point_offsets_from_epoch() {
        let tp = TimePoint::from_index(default_epoch(), 36);
        assert_eq!(tp.hour_of_day(), 12);
        assert_eq!((tp.timestamp - default_epoch()).num_hours(), 36);
    }

    #[test]
    fn prosumption_is_load_minus_pv() {
        let s =
            BuildingSeries::from_components(3, default_epoch(), vec![1.0, 2.0], vec![0.2, 2.5])
                .unwrap();
        assert_eq!(s.prosumption(), &[0.8, -0.5]);
    }

    #[test]
    fn rejects_non_finite_and_misaligned() {
        let e = BuildingSeries::from_prosumption(1, default_epoch(), vec![0.0, f64::NAN]);
        assert!(matches!(e, Err(SeriesError::NonFinite { index: 1, .. })));
        let e = BuildingSeries::from_components(1, default_epoch(), vec![0.0], vec![]);
        assert!(matches!(e, Err(SeriesError::LengthMismatch { .. })));
    }

    #[test]
    fn anchor_is_noon_before_schedule_day() {
        let h = HorizonSpec::default();
        assert_eq!(h.anchor_for_day(8), Some(8 * 24 - 12));
        assert!(!h.day_is_usable(7, 10_000));
        assert!(h.day_is_usable(8, 8 * 24 + 30));
        assert!(!h.day_is_usable(8, 8 * 24 + 29));
    }
}
