//! First-level schedule optimization.
//!
//! Stage 1 solves the convex relaxation that drops `P_s⁺·P_s⁻ = 0`. If the
//! relaxed plan still charges and discharges in the same step, stage 2 runs a
//! depth-first branch-and-bound over per-step directions (charge-only or
//! discharge-only), pruning with the relaxation bound.

use super::qp::{self, Constraint, QpSettings, QuadProgram};
use super::{next_energy, BatteryState, DispatchError, DispatchSchedule, COMPLEMENTARITY_TOL};
use crate::types::{BatteryParams, CostParams, DT_HOURS};
use crate::valuation::ds_cost;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Small quadratic weight on battery power; makes the Hessian positive
    /// definite and breaks ties between equivalent power splits.
    pub regularization: f64,
    pub node_limit: usize,
    /// Prune nodes whose relaxation is within this many € of the incumbent.
    pub prune_tol: f64,
    /// Run branch-and-bound even when the relaxation is already complementary.
    pub force_branch_and_bound: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            regularization: 1e-7,
            node_limit: 4_000,
            prune_tol: 1e-9,
            force_branch_and_bound: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub schedule: DispatchSchedule,
    /// Regularized objective of the returned plan.
    pub qp_objective: f64,
    /// Regularized objective of the root relaxation (a lower bound).
    pub relaxation_objective: f64,
    pub used_branch_and_bound: bool,
    pub nodes: usize,
    pub node_limit_hit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    /// P_s⁻ fixed to zero.
    Charge,
    /// P_s⁺ fixed to zero.
    Discharge,
}

const fn charge_var(k: usize) -> usize {
    4 * k
}
const fn discharge_var(k: usize) -> usize {
    4 * k + 1
}
const fn import_var(k: usize) -> usize {
    4 * k + 2
}
const fn export_var(k: usize) -> usize {
    4 * k + 3
}

fn build_qp(
    forecast: &[f64],
    e0: f64,
    battery: &BatteryParams,
    cost: &CostParams,
    regularization: f64,
    fixes: &[Option<Direction>],
) -> QuadProgram {
    let n_steps = forecast.len();
    let n = 4 * n_steps;
    let dt = DT_HOURS;
    let mut hessian_diag = vec![2.0 * regularization; n];
    let mut linear = vec![0.0; n];
    let mut constraints = Vec::with_capacity(9 * n_steps);
    for (k, &f) in forecast.iter().enumerate() {
        hessian_diag[import_var(k)] += 2.0 * cost.cq_plus * dt * dt;
        hessian_diag[export_var(k)] += 2.0 * cost.cq_minus * dt * dt;
        linear[import_var(k)] = cost.cl_plus * dt;
        linear[export_var(k)] = cost.cl_minus * dt;

        constraints.push(Constraint::eq(
            vec![
                (import_var(k), 1.0),
                (export_var(k), 1.0),
                (charge_var(k), -1.0),
                (discharge_var(k), -1.0),
            ],
            f,
        ));
        match fixes[k] {
            Some(Direction::Discharge) => {
                constraints.push(Constraint::eq(vec![(charge_var(k), 1.0)], 0.0));
            }
            _ => {
                constraints.push(Constraint::ge(vec![(charge_var(k), 1.0)], 0.0));
                constraints.push(Constraint::ge(vec![(charge_var(k), -1.0)], -battery.p_max));
            }
        }
        match fixes[k] {
            Some(Direction::Charge) => {
                constraints.push(Constraint::eq(vec![(discharge_var(k), 1.0)], 0.0));
            }
            _ => {
                constraints.push(Constraint::ge(vec![(discharge_var(k), -1.0)], 0.0));
                constraints.push(Constraint::ge(vec![(discharge_var(k), 1.0)], battery.p_min));
            }
        }
        constraints.push(Constraint::ge(vec![(import_var(k), 1.0)], 0.0));
        constraints.push(Constraint::ge(vec![(export_var(k), -1.0)], 0.0));

        let mut cumulative = Vec::with_capacity(2 * (k + 1));
        for j in 0..=k {
            cumulative.push((charge_var(j), dt * (1.0 - battery.mu)));
            cumulative.push((discharge_var(j), dt * (1.0 + battery.mu)));
        }
        let upper: Vec<(usize, f64)> = cumulative.iter().map(|&(i, v)| (i, -v)).collect();
        constraints.push(Constraint::ge(cumulative, battery.e_min - e0));
        constraints.push(Constraint::ge(upper, -(battery.e_max - e0)));
    }
    QuadProgram {
        hessian_diag,
        linear,
        constraints,
    }
}

struct Relaxation {
    x: Vec<f64>,
    objective: f64,
}

impl Relaxation {
    /// Step with the largest simultaneous charge/discharge among unfixed steps.
    fn most_violated(&self, fixes: &[Option<Direction>]) -> Option<usize> {
        let mut best = None;
        let mut worst = COMPLEMENTARITY_TOL;
        for (k, fix) in fixes.iter().enumerate() {
            if fix.is_some() {
                continue;
            }
            let gap = (self.x[charge_var(k)].max(0.0) * self.x[discharge_var(k)].min(0.0)).abs();
            if gap > worst {
                worst = gap;
                best = Some(k);
            }
        }
        best
    }

    fn rounded_fixes(&self, n_steps: usize) -> Vec<Option<Direction>> {
        (0..n_steps)
            .map(|k| {
                let net = self.x[charge_var(k)] + self.x[discharge_var(k)];
                Some(if net >= 0.0 {
                    Direction::Charge
                } else {
                    Direction::Discharge
                })
            })
            .collect()
    }
}

struct Solver<'a> {
    forecast: &'a [f64],
    e0: f64,
    battery: &'a BatteryParams,
    cost: &'a CostParams,
    options: SolveOptions,
    settings: QpSettings,
    nodes: usize,
}

impl Solver<'_> {
    fn relax(&mut self, fixes: &[Option<Direction>]) -> Result<Relaxation, DispatchError> {
        self.nodes += 1;
        let problem = build_qp(
            self.forecast,
            self.e0,
            self.battery,
            self.cost,
            self.options.regularization,
            fixes,
        );
        let sol = qp::solve(&problem, &self.settings)?;
        Ok(Relaxation {
            x: sol.x,
            objective: sol.objective,
        })
    }
}

/// Computes the day-ahead schedule with default solver options.
pub fn solve_day_ahead(
    forecast: &[f64],
    e0: f64,
    battery: &BatteryParams,
    cost: &CostParams,
) -> Result<DispatchSchedule, DispatchError> {
    solve_day_ahead_with(forecast, e0, battery, cost, &SolveOptions::default()).map(|r| r.schedule)
}

pub fn solve_day_ahead_with(
    forecast: &[f64],
    e0: f64,
    battery: &BatteryParams,
    cost: &CostParams,
    options: &SolveOptions,
) -> Result<SolveReport, DispatchError> {
    if let Some(k) = forecast.iter().position(|v| !v.is_finite()) {
        return Err(DispatchError::NonFiniteForecast(k));
    }
    BatteryState::new(e0).check(battery)?;
    let e0 = e0.clamp(battery.e_min, battery.e_max);
    let n_steps = forecast.len();
    let mut solver = Solver {
        forecast,
        e0,
        battery,
        cost,
        options: *options,
        settings: QpSettings::default(),
        nodes: 0,
    };
    let free = vec![None; n_steps];
    let root = solver.relax(&free)?;
    let relaxation_objective = root.objective;
    if root.most_violated(&free).is_none() && !options.force_branch_and_bound {
        return Ok(SolveReport {
            schedule: finalize(&root.x, forecast, e0, battery, cost),
            qp_objective: root.objective,
            relaxation_objective,
            used_branch_and_bound: false,
            nodes: solver.nodes,
            node_limit_hit: false,
        });
    }

    let mut incumbent = solver.relax(&root.rounded_fixes(n_steps))?;
    if root.most_violated(&free).is_none() && root.objective < incumbent.objective {
        incumbent = Relaxation {
            x: root.x.clone(),
            objective: root.objective,
        };
    }
    let mut stack: Vec<(Vec<Option<Direction>>, Option<Relaxation>)> = vec![(free, Some(root))];
    let mut node_limit_hit = false;
    while let Some((fixes, solved)) = stack.pop() {
        let relaxation = match solved {
            Some(r) => r,
            None => {
                if solver.nodes >= options.node_limit {
                    node_limit_hit = true;
                    break;
                }
                solver.relax(&fixes)?
            }
        };
        if relaxation.objective >= incumbent.objective - options.prune_tol {
            continue;
        }
        match relaxation.most_violated(&fixes) {
            None => incumbent = relaxation,
            Some(k) => {
                let mut discharge = fixes.clone();
                discharge[k] = Some(Direction::Discharge);
                let mut charge = fixes;
                charge[k] = Some(Direction::Charge);
                // Charge branch is explored first.
                stack.push((discharge, None));
                stack.push((charge, None));
            }
        }
    }
    Ok(SolveReport {
        schedule: finalize(&incumbent.x, forecast, e0, battery, cost),
        qp_objective: incumbent.objective,
        relaxation_objective,
        used_branch_and_bound: true,
        nodes: solver.nodes,
        node_limit_hit,
    })
}

fn finalize(
    x: &[f64],
    forecast: &[f64],
    e0: f64,
    battery: &BatteryParams,
    cost: &CostParams,
) -> DispatchSchedule {
    let n = forecast.len();
    let mut s = DispatchSchedule {
        e_s: Vec::with_capacity(n + 1),
        ..Default::default()
    };
    s.e_s.push(e0);
    let mut energy = e0;
    for (k, &f) in forecast.iter().enumerate() {
        let plus = x[charge_var(k)].clamp(0.0, battery.p_max);
        let minus = x[discharge_var(k)].clamp(battery.p_min, 0.0);
        let p_s = plus + minus;
        let p_g = p_s + f;
        energy = next_energy(energy, plus, minus, battery.mu);
        s.p_s_plus.push(plus);
        s.p_s_minus.push(minus);
        s.p_s.push(p_s);
        s.p_g.push(p_g);
        s.p_g_plus.push(p_g.max(0.0));
        s.p_g_minus.push(p_g.min(0.0));
        s.e_s.push(energy);
    }
    s.objective = schedule_objective(&s, cost);
    s
}

/// Schedule cost of a plan, €.
pub fn schedule_objective(schedule: &DispatchSchedule, cost: &CostParams) -> f64 {
    schedule
        .p_g_plus
        .iter()
        .zip(&schedule.p_g_minus)
        .map(|(&p, &m)| ds_cost(p, m, cost).expect("split signs hold by construction"))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuation::ds_cost_net;
    use rand::{Rng, SeedableRng};

    fn params() -> (BatteryParams, CostParams) {
        (BatteryParams::default(), CostParams::default())
    }

    /// Exhaustive search over complementary battery powers on a 0.1 kW grid.
    pub(crate) fn brute_force(forecast: &[f64], e0: f64, b: &BatteryParams, c: &CostParams) -> f64 {
        let grid: Vec<f64> = (-50..=50).map(|i| i as f64 * 0.1).collect();
        fn rec(k: usize, e: f64, f: &[f64], grid: &[f64], b: &BatteryParams, c: &CostParams) -> f64 {
            if k == f.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for &p in grid {
                if p < b.p_min - 1e-12 || p > b.p_max + 1e-12 {
                    continue;
                }
                let e1 = next_energy(e, p.max(0.0), p.min(0.0), b.mu);
                if e1 < b.e_min - 1e-9 || e1 > b.e_max + 1e-9 {
                    continue;
                }
                let v = ds_cost_net(p + f[k], c) + rec(k + 1, e1, f, grid, b, c);
                best = best.min(v);
            }
            best
        }
        rec(0, e0, forecast, &grid, b, c)
    }

    #[test]
    fn zero_forecast_with_empty_battery_does_nothing() {
        let (b, c) = params();
        let s = solve_day_ahead(&[0.0; 30], 0.0, &b, &c).unwrap();
        assert!(s.p_g.iter().all(|v| v.abs() < 1e-9));
        assert!(s.p_s.iter().all(|v| v.abs() < 1e-9));
        assert!(s.objective.abs() < 1e-9);
        assert!((brute_force(&[0.0, 0.0], 0.0, &b, &c)).abs() < 1e-12);
    }

    #[test]
    fn zero_forecast_with_stored_energy_exports() {
        // Without a terminal energy value, selling stored energy at up to
        // cl⁻ / (2 cq⁻) = 1.5 kW lowers the schedule cost below zero.
        let (b, c) = params();
        let s = solve_day_ahead(&[0.0, 0.0], 6.75, &b, &c).unwrap();
        let brute = brute_force(&[0.0, 0.0], 6.75, &b, &c);
        assert!(brute < 0.0);
        assert!(s.objective <= brute + 1e-2);
        assert!(s.p_g.iter().all(|v| (*v + 1.5).abs() < 1e-4));
    }

    #[test]
    fn constant_load_matches_brute_force() {
        let (b, c) = params();
        let s = solve_day_ahead(&[1.0, 1.0], 6.75, &b, &c).unwrap();
        let brute = brute_force(&[1.0, 1.0], 6.75, &b, &c);
        assert!(s.objective <= brute + 1e-2, "{} vs {}", s.objective, brute);
    }

    #[test]
    fn rejects_out_of_bounds_start() {
        let (b, c) = params();
        assert!(matches!(
            solve_day_ahead(&[0.0; 3], 14.0, &b, &c),
            Err(DispatchError::InfeasibleStart { .. })
        ));
        assert!(matches!(
            solve_day_ahead(&[0.0, f64::NAN], 1.0, &b, &c),
            Err(DispatchError::NonFiniteForecast(1))
        ));
    }

    #[test]
    fn small_instances_match_brute_force() {
        let (b, c) = params();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(1..=3);
            let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect();
            let e0 = rng.gen_range(0.0..13.5);
            let s = solve_day_ahead(&f, e0, &b, &c).unwrap();
            assert!(s.check_feasible(&f, e0, &b).is_none());
            let brute = brute_force(&f, e0, &b, &c);
            assert!(s.objective <= brute + 1e-2, "{f:?} {e0}: {} vs {}", s.objective, brute);
        }
    }

    #[test]
    fn surplus_with_full_battery_needs_branching() {
        let (b, c) = params();
        let f = vec![-4.5; 6];
        let r = solve_day_ahead_with(&f, 13.4, &b, &c, &SolveOptions::default()).unwrap();
        assert!(r.schedule.check_feasible(&f, 13.4, &b).is_none());
        assert!(r.schedule.complementarity_gap() <= COMPLEMENTARITY_TOL);
        assert!(r.qp_objective >= r.relaxation_objective - 1e-9);
    }

    #[test]
    fn deterministic() {
        let (b, c) = params();
        let f: Vec<f64> = (0..30).map(|k| (k as f64 / 3.0).sin() * 3.0).collect();
        let a = solve_day_ahead(&f, 2.0, &b, &c).unwrap();
        let z = solve_day_ahead(&f, 2.0, &b, &c).unwrap();
        assert_eq!(a, z);
    }
}
