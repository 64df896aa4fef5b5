//! Two-level dispatchable-feeder optimization.
//!
//! The first level computes a day-ahead grid schedule from a prosumption
//! forecast ([`solve_day_ahead`]); the second level tracks that schedule hour
//! by hour against the actual prosumption ([`dispatch_step`]).

mod day_ahead;
pub mod qp;
mod simulate;
mod trace;

use thiserror::Error;

use crate::types::{BatteryParams, DT_HOURS};

pub use day_ahead::{
    schedule_objective, solve_day_ahead, solve_day_ahead_with, SolveOptions, SolveReport,
};
pub use simulate::{simulate_day, DayInputs, DispatchOutcome};
pub use trace::write_trace_csv;

/// Tolerance on energy bounds, kWh.
pub const ENERGY_TOL: f64 = 1e-6;
/// Tolerance on the product of charge and discharge power.
pub const COMPLEMENTARITY_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DispatchError {
    #[error("state of energy {energy} kWh after step is outside [{min}, {max}]")]
    InfeasibleStep { energy: f64, min: f64, max: f64 },
    #[error("initial state of energy {energy} kWh is outside [{min}, {max}]")]
    InfeasibleStart { energy: f64, min: f64, max: f64 },
    #[error("battery power split has the wrong sign: plus={plus}, minus={minus}")]
    SplitSign { plus: f64, minus: f64 },
    #[error("forecast contains a non-finite value at step {0}")]
    NonFiniteForecast(usize),
    #[error("expected {expected} values for `{name}`, got {got}")]
    Length {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("QP solver did not converge: {0}")]
    Convergence(#[from] qp::QpError),
}

/// Stored battery energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryState {
    pub energy: f64,
}

impl BatteryState {
    pub fn new(energy: f64) -> Self {
        Self { energy }
    }

    pub fn check(&self, params: &BatteryParams) -> Result<(), DispatchError> {
        if self.energy < params.e_min - ENERGY_TOL || self.energy > params.e_max + ENERGY_TOL {
            return Err(DispatchError::InfeasibleStart {
                energy: self.energy,
                min: params.e_min,
                max: params.e_max,
            });
        }
        Ok(())
    }
}

/// Energy after one step with the loss model; no bound checks.
pub fn next_energy(energy: f64, p_s_plus: f64, p_s_minus: f64, mu: f64) -> f64 {
    energy + DT_HOURS * ((p_s_plus + p_s_minus) - mu * p_s_plus + mu * p_s_minus)
}

/// Advances the state of energy by one step of split battery power.
pub fn step_soc(
    state: BatteryState,
    p_s_plus: f64,
    p_s_minus: f64,
    params: &BatteryParams,
) -> Result<BatteryState, DispatchError> {
    if p_s_plus < 0.0 || p_s_minus > 0.0 {
        return Err(DispatchError::SplitSign {
            plus: p_s_plus,
            minus: p_s_minus,
        });
    }
    let energy = next_energy(state.energy, p_s_plus, p_s_minus, params.mu);
    if energy < params.e_min - ENERGY_TOL || energy > params.e_max + ENERGY_TOL {
        return Err(DispatchError::InfeasibleStep {
            energy,
            min: params.e_min,
            max: params.e_max,
        });
    }
    Ok(BatteryState { energy })
}

/// Day-ahead decision vector over the scheduling horizon.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DispatchSchedule {
    pub p_g: Vec<f64>,
    pub p_g_plus: Vec<f64>,
    pub p_g_minus: Vec<f64>,
    pub p_s: Vec<f64>,
    pub p_s_plus: Vec<f64>,
    pub p_s_minus: Vec<f64>,
    /// Planned state of energy, one entry longer than the power vectors.
    pub e_s: Vec<f64>,
    /// Schedule cost of the plan, €.
    pub objective: f64,
}

impl DispatchSchedule {
    pub fn len(&self) -> usize {
        self.p_g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_g.is_empty()
    }

    /// Largest |P_s⁺·P_s⁻| over the horizon.
    pub fn complementarity_gap(&self) -> f64 {
        self.p_s_plus
            .iter()
            .zip(&self.p_s_minus)
            .map(|(a, b)| (a * b).abs())
            .fold(0.0, f64::max)
    }

    /// Returns a description of the first violated constraint, if any.
    pub fn check_feasible(&self, forecast: &[f64], e0: f64, params: &BatteryParams) -> Option<String> {
        let tol = ENERGY_TOL;
        if (self.e_s[0] - e0).abs() > 1e-8 {
            return Some(format!("initial energy {} != {}", self.e_s[0], e0));
        }
        for k in 0..self.len() {
            let checks = [
                ((self.p_g[k] - self.p_g_plus[k] - self.p_g_minus[k]).abs() <= 1e-9, "grid split"),
                ((self.p_s[k] - self.p_s_plus[k] - self.p_s_minus[k]).abs() <= 1e-9, "battery split"),
                ((self.p_g[k] - self.p_s[k] - forecast[k]).abs() <= 1e-9, "power balance"),
                (self.p_g_plus[k] >= 0.0 && self.p_g_minus[k] <= 0.0, "grid signs"),
                (self.p_s_plus[k] >= 0.0 && self.p_s_minus[k] <= 0.0, "battery signs"),
                ((self.p_s_plus[k] * self.p_s_minus[k]).abs() <= COMPLEMENTARITY_TOL, "complementarity"),
                ((self.p_g_plus[k] * self.p_g_minus[k]).abs() <= COMPLEMENTARITY_TOL, "grid complementarity"),
                (self.p_s[k] >= params.p_min - tol && self.p_s[k] <= params.p_max + tol, "power bounds"),
                (
                    self.e_s[k + 1] >= params.e_min - tol && self.e_s[k + 1] <= params.e_max + tol,
                    "energy bounds",
                ),
                (
                    (self.e_s[k + 1]
                        - next_energy(self.e_s[k], self.p_s_plus[k], self.p_s_minus[k], params.mu))
                    .abs()
                        <= 1e-8,
                    "energy dynamics",
                ),
            ];
            if let Some((_, name)) = checks.iter().find(|(ok, _)| !ok) {
                return Some(format!("step {k}: {name} violated"));
            }
        }
        None
    }
}

/// Result of one second-level dispatch step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDispatch {
    pub p_g_actual: f64,
    pub delta_p_g: f64,
    pub p_s: f64,
    pub new_state: BatteryState,
}

/// Feasible battery power interval at the given state; always contains 0.
pub fn feasible_power_interval(state: BatteryState, battery: &BatteryParams) -> (f64, f64) {
    let lb = (battery.e_min - state.energy) / (DT_HOURS * (1.0 + battery.mu));
    let ub = (battery.e_max - state.energy) / (DT_HOURS * (1.0 - battery.mu));
    (battery.p_min.max(lb.min(0.0)), battery.p_max.min(ub.max(0.0)))
}

/// Second-level dispatch: the battery power closest to the schedule within limits.
pub fn dispatch_step(
    scheduled_p_g: f64,
    actual_load: f64,
    state: BatteryState,
    battery: &BatteryParams,
) -> Result<StepDispatch, DispatchError> {
    state.check(battery)?;
    let desired = scheduled_p_g - actual_load;
    let (lb, ub) = feasible_power_interval(state, battery);
    // Plans computed against cumulative constraints may overshoot by rounding.
    let slack = 1e-9;
    let p_s = if desired >= lb - slack && desired <= ub + slack {
        desired
    } else {
        desired.clamp(lb, ub)
    };
    let delta_p_g = p_s - desired;
    let new_state = step_soc(state, p_s.max(0.0), p_s.min(0.0), battery)?;
    Ok(StepDispatch {
        p_g_actual: scheduled_p_g + delta_p_g,
        delta_p_g,
        p_s,
        new_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn table() -> BatteryParams {
        BatteryParams::default()
    }

    #[test]
    fn step_soc_examples() {
        let s = BatteryState::new(6.75);
        assert_eq!(step_soc(s, 0.0, 0.0, &table()).unwrap().energy, 6.75);
        let up = step_soc(s, 2.0, 0.0, &table()).unwrap().energy;
        assert!((up - 8.65).abs() < 1e-12);
        let down = step_soc(s, 0.0, -2.0, &table()).unwrap().energy;
        assert!((down - 4.65).abs() < 1e-12);
    }

    #[test]
    fn step_soc_errors() {
        let s = BatteryState::new(13.0);
        assert!(matches!(
            step_soc(s, 5.0, 0.0, &table()),
            Err(DispatchError::InfeasibleStep { .. })
        ));
        assert!(matches!(
            step_soc(s, -1.0, 0.0, &table()),
            Err(DispatchError::SplitSign { .. })
        ));
    }

    #[test]
    fn dispatch_examples() {
        let r = dispatch_step(1.0, 1.0, BatteryState::new(3.0), &table()).unwrap();
        assert_eq!((r.p_s, r.delta_p_g), (0.0, 0.0));

        let r = dispatch_step(0.0, 3.0, BatteryState::new(0.0), &table()).unwrap();
        assert_eq!(r.p_s, 0.0);
        assert!((r.delta_p_g - 3.0).abs() < 1e-12);
        assert!((r.p_g_actual - 3.0).abs() < 1e-12);

        let r = dispatch_step(6.0, 0.0, BatteryState::new(6.75), &table()).unwrap();
        assert_eq!(r.p_s, 5.0);
        assert!((r.delta_p_g + 1.0).abs() < 1e-12);
    }

    /// Brute-force minimizer of (ΔP_g)² over a 1e-3 kW grid of feasible battery powers.
    fn grid_dispatch(sched: f64, load: f64, energy: f64, b: &BatteryParams) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let steps = ((b.p_max - b.p_min) / 1e-3).round() as i64;
        for i in 0..=steps {
            let p = b.p_min + i as f64 * 1e-3;
            let e = next_energy(energy, p.max(0.0), p.min(0.0), b.mu);
            if e < b.e_min - 1e-12 || e > b.e_max + 1e-12 {
                continue;
            }
            let dev = (p + load - sched).powi(2);
            if dev < best.0 {
                best = (dev, p);
            }
        }
        best.1
    }

    #[test]
    fn closed_form_matches_grid_search() {
        let b = table();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let e = rng.gen_range(b.e_min..=b.e_max);
            let sched = rng.gen_range(-8.0..8.0);
            let load = rng.gen_range(-6.0..6.0);
            let r = dispatch_step(sched, load, BatteryState::new(e), &b).unwrap();
            let brute = grid_dispatch(sched, load, e, &b);
            assert!((r.p_s - brute).abs() <= 2e-3, "{} vs {}", r.p_s, brute);
        }
    }

    #[test]
    fn interval_contains_zero() {
        let b = table();
        for e in [0.0, 1e-12, 6.75, 13.5, 13.5 - 1e-12] {
            let (lb, ub) = feasible_power_interval(BatteryState::new(e), &b);
            assert!(lb <= 0.0 && ub >= 0.0);
        }
    }
}
