use super::{dispatch_step, solve_day_ahead, BatteryState, DispatchError, DispatchSchedule};
use crate::types::{BatteryParams, CostParams, HorizonSpec, HOURS_PER_DAY};
use crate::valuation::{ds_cost, imbalance_cost, total_cost, CostBreakdown, StepCost};

/// Inputs for one forecast anchor (noon) and the day scheduled from it.
#[derive(Debug, Clone, Copy)]
pub struct DayInputs<'a> {
    /// Forecast over the full forecast window starting at the anchor.
    pub forecast: &'a [f64],
    /// Actual prosumption over the same window.
    pub actual: &'a [f64],
    pub state_at_anchor: BatteryState,
    /// Grid schedule still in force between the anchor and the schedule start.
    /// `None` leaves the battery idle over those hours.
    pub bridge_schedule: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchOutcome {
    pub schedule: DispatchSchedule,
    /// Actual grid power over the billed hours.
    pub actual_p_g: Vec<f64>,
    pub deviations: Vec<f64>,
    /// State of energy at the schedule start and after each billed hour.
    pub soc_trajectory: Vec<f64>,
    pub cost: CostBreakdown,
    /// State of energy at the next forecast anchor.
    pub state_at_next_anchor: BatteryState,
    /// Part of this schedule that bridges the next anchor to the next schedule start.
    pub next_bridge: Vec<f64>,
}

impl DispatchOutcome {
    pub fn energy_at_schedule_start(&self) -> f64 {
        self.soc_trajectory[0]
    }
}

/// Runs the bridge hours, the day-ahead optimization and the billed day.
///
/// The first `schedule_start_offset` hours of the window are dispatched
/// against `bridge_schedule` on actual prosumption to obtain the state at the
/// schedule start. The schedule then covers `schedule_steps` hours, of which
/// the first 24 are dispatched and billed; the rest are superseded by the next
/// day's schedule.
pub fn simulate_day(
    inputs: DayInputs<'_>,
    battery: &BatteryParams,
    cost: &CostParams,
    horizon: &HorizonSpec,
) -> Result<DispatchOutcome, DispatchError> {
    let offset = horizon.schedule_start_offset;
    let steps = horizon.schedule_steps;
    for (name, values) in [("forecast", inputs.forecast), ("actual", inputs.actual)] {
        if values.len() != horizon.forecast_hours {
            return Err(DispatchError::Length {
                name,
                expected: horizon.forecast_hours,
                got: values.len(),
            });
        }
    }
    if let Some(bridge) = inputs.bridge_schedule {
        if bridge.len() != offset {
            return Err(DispatchError::Length {
                name: "bridge schedule",
                expected: offset,
                got: bridge.len(),
            });
        }
    }

    let mut state = inputs.state_at_anchor;
    state.check(battery)?;
    for h in 0..offset {
        let load = inputs.actual[h];
        let scheduled = inputs.bridge_schedule.map_or(load, |b| b[h]);
        state = dispatch_step(scheduled, load, state, battery)?.new_state;
    }

    let schedule = solve_day_ahead(
        &inputs.forecast[offset..offset + steps],
        state.energy,
        battery,
        cost,
    )?;

    let billed = steps.min(HOURS_PER_DAY);
    let next_anchor_step = HOURS_PER_DAY.saturating_sub(offset).min(billed);
    let mut actual_p_g = Vec::with_capacity(billed);
    let mut deviations = Vec::with_capacity(billed);
    let mut soc = Vec::with_capacity(billed + 1);
    let mut step_costs = Vec::with_capacity(billed);
    let mut state_at_next_anchor = state;
    soc.push(state.energy);
    for k in 0..billed {
        if k == next_anchor_step {
            state_at_next_anchor = state;
        }
        let step = dispatch_step(schedule.p_g[k], inputs.actual[offset + k], state, battery)?;
        state = step.new_state;
        actual_p_g.push(step.p_g_actual);
        deviations.push(step.delta_p_g);
        soc.push(state.energy);
        step_costs.push(StepCost {
            ds: ds_cost(schedule.p_g_plus[k], schedule.p_g_minus[k], cost)
                .expect("schedule split signs hold"),
            imb: imbalance_cost(step.delta_p_g, cost),
        });
    }
    if next_anchor_step == billed {
        state_at_next_anchor = state;
    }
    let next_bridge = schedule.p_g[next_anchor_step..(next_anchor_step + offset).min(steps)].to_vec();

    Ok(DispatchOutcome {
        schedule,
        actual_p_g,
        deviations,
        soc_trajectory: soc,
        cost: total_cost(&step_costs, cost.alpha),
        state_at_next_anchor,
        next_bridge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn profile(seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..42)
            .map(|h| {
                let hour = (h + 12) % 24;
                let solar = if (7..18).contains(&hour) { 3.0 } else { 0.0 };
                0.8 + rng.gen_range(-0.3..0.3) - solar
            })
            .collect()
    }

    fn run(forecast: &[f64], actual: &[f64], e: f64) -> DispatchOutcome {
        simulate_day(
            DayInputs {
                forecast,
                actual,
                state_at_anchor: BatteryState::new(e),
                bridge_schedule: None,
            },
            &BatteryParams::default(),
            &CostParams::default(),
            &HorizonSpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_forecast_has_no_imbalance() {
        for seed in 0..10 {
            let actual = profile(seed);
            let out = run(&actual, &actual, 1.0 + seed as f64);
            assert!(out.deviations.iter().all(|d| *d == 0.0), "{:?}", out.deviations);
            assert_eq!(out.cost.c_imb, 0.0);
        }
    }

    #[test]
    fn zero_prosumption_costs_nothing() {
        let zeros = vec![0.0; 42];
        let out = run(&zeros, &zeros, 0.0);
        assert!(out.cost.c_total.abs() < 1e-9);
        // Stored energy is sold off instead, which earns money.
        let out = run(&zeros, &zeros, 6.75);
        assert!(out.cost.c_total < 0.0);
        assert_eq!(out.cost.c_imb, 0.0);
    }

    #[test]
    fn soc_stays_within_bounds() {
        let b = BatteryParams::default();
        for seed in 0..10 {
            let actual = profile(seed);
            let forecast = profile(seed + 100);
            let out = run(&forecast, &actual, 13.5 * (seed as f64) / 9.0);
            for e in &out.soc_trajectory {
                assert!(*e >= b.e_min - 1e-6 && *e <= b.e_max + 1e-6);
            }
            for (k, d) in out.deviations.iter().enumerate() {
                assert!((out.actual_p_g[k] - out.schedule.p_g[k] - d).abs() < 1e-12);
            }
            assert_eq!(out.next_bridge.len(), 12);
        }
    }

    #[test]
    fn idle_bridge_keeps_energy() {
        let actual = profile(3);
        let out = run(&actual, &actual, 4.2);
        assert_eq!(out.energy_at_schedule_start(), 4.2);
    }

    #[test]
    fn length_errors() {
        let short = vec![0.0; 41];
        let ok = vec![0.0; 42];
        let r = simulate_day(
            DayInputs {
                forecast: &short,
                actual: &ok,
                state_at_anchor: BatteryState::new(1.0),
                bridge_schedule: None,
            },
            &BatteryParams::default(),
            &CostParams::default(),
            &HorizonSpec::default(),
        );
        assert!(matches!(r, Err(DispatchError::Length { .. })));
    }
}
