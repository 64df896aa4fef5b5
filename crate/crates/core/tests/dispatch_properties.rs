use feeder_core::dispatch::{
    dispatch_step, simulate_day, solve_day_ahead, solve_day_ahead_with, BatteryState, DayInputs,
    SolveOptions,
};
use feeder_core::types::{BatteryParams, CostParams, HorizonSpec};
use feeder_core::valuation::ds_cost_net;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exhaustive search over battery powers on a 0.1 kW grid; each step is
/// either charging or discharging, so complementarity holds by construction.
fn grid_optimum(forecast: &[f64], e0: f64, b: &BatteryParams, c: &CostParams) -> f64 {
    fn go(k: usize, e: f64, f: &[f64], b: &BatteryParams, c: &CostParams) -> f64 {
        if k == f.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for i in -50..=50 {
            let p = i as f64 / 10.0;
            let e_next = if p >= 0.0 { e + p * (1.0 - b.mu) } else { e + p * (1.0 + b.mu) };
            if e_next < b.e_min - 1e-9 || e_next > b.e_max + 1e-9 {
                continue;
            }
            let step = ds_cost_net(p + f[k], c);
            best = best.min(step + go(k + 1, e_next, f, b, c));
        }
        best
    }
    go(0, e0, forecast, b, c)
}

fn random_forecast(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect()
}

#[test]
fn short_horizons_match_grid_search() {
    let (b, c) = (BatteryParams::default(), CostParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 1..=3 {
        let cases = if n == 3 { 5 } else { 40 };
        for _ in 0..cases {
            let f = random_forecast(&mut rng, n);
            let e0 = rng.gen_range(b.e_min..=b.e_max);
            let s = solve_day_ahead(&f, e0, &b, &c).unwrap();
            let grid = grid_optimum(&f, e0, &b, &c);
            assert!(s.objective <= grid + 1e-2, "{f:?} e0={e0}: {} vs {grid}", s.objective);
        }
    }
}

#[test]
fn random_schedules_are_feasible() {
    let (b, c) = (BatteryParams::default(), CostParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let f = random_forecast(&mut rng, 30);
        let e0 = rng.gen_range(b.e_min..=b.e_max);
        let s = solve_day_ahead(&f, e0, &b, &c).unwrap();
        assert_eq!(s.check_feasible(&f, e0, &b), None);
        assert!(s.e_s.iter().all(|e| (-1e-6..=13.5 + 1e-6).contains(e)));
        let gap = s
            .p_g_plus
            .iter()
            .zip(&s.p_g_minus)
            .map(|(a, m)| (a * m).abs())
            .fold(0.0, f64::max);
        assert!(gap <= 1e-6);
    }
}

#[test]
fn complementary_relaxation_is_globally_optimal() {
    let (b, c) = (BatteryParams::default(), CostParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut compared = 0;
    while compared < 100 {
        let n = rng.gen_range(2..=8);
        let f = random_forecast(&mut rng, n);
        let e0 = rng.gen_range(b.e_min..=b.e_max);
        let plain = solve_day_ahead_with(&f, e0, &b, &c, &SolveOptions::default()).unwrap();
        if plain.used_branch_and_bound {
            continue;
        }
        let forced = solve_day_ahead_with(
            &f,
            e0,
            &b,
            &c,
            &SolveOptions {
                force_branch_and_bound: true,
                ..SolveOptions::default()
            },
        )
        .unwrap();
        assert!(
            (plain.schedule.objective - forced.schedule.objective).abs() <= 1e-6,
            "{} vs {}",
            plain.schedule.objective,
            forced.schedule.objective
        );
        compared += 1;
    }
}

#[test]
fn solving_is_deterministic() {
    let (b, c) = (BatteryParams::default(), CostParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = random_forecast(&mut rng, 30);
    let a = solve_day_ahead(&f, 2.0, &b, &c).unwrap();
    let z = solve_day_ahead(&f, 2.0, &b, &c).unwrap();
    assert_eq!(a, z);
}

#[test]
fn closed_form_dispatch_matches_grid_on_many_states() {
    let b = BatteryParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..2_000 {
        let e = rng.gen_range(b.e_min..=b.e_max);
        let sched = rng.gen_range(-8.0..8.0);
        let load = rng.gen_range(-6.0..6.0);
        let r = dispatch_step(sched, load, BatteryState::new(e), &b).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for i in -5000..=5000 {
            let p = i as f64 * 1e-3;
            let e_next = if p >= 0.0 { e + p * (1.0 - b.mu) } else { e + p * (1.0 + b.mu) };
            if e_next < b.e_min - 1e-12 || e_next > b.e_max + 1e-12 {
                continue;
            }
            let dev = (p + load - sched).powi(2);
            if dev < best.0 {
                best = (dev, p);
            }
        }
        assert!((r.p_s - best.1).abs() <= 2e-3);
        assert!((r.delta_p_g - (r.p_g_actual - sched)).abs() < 1e-12);
    }
}

#[test]
fn simulated_days_chain_bridge_schedules() {
    let (b, c, h) = (BatteryParams::default(), CostParams::default(), HorizonSpec::default());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let series: Vec<f64> = (0..24 * 6).map(|i| {
        let hour = i % 24;
        1.0 + rng.gen_range(-0.5..0.5) - if (8..17).contains(&hour) { 3.0 } else { 0.0 }
    }).collect();
    let mut state = BatteryState::new(b.e_init);
    let mut bridge: Option<Vec<f64>> = None;
    for day in 1..4 {
        let anchor = 24 * day - 12;
        let window = &series[anchor..anchor + 42];
        let out = simulate_day(
            DayInputs {
                forecast: window,
                actual: window,
                state_at_anchor: state,
                bridge_schedule: bridge.as_deref(),
            },
            &b,
            &c,
            &h,
        )
        .unwrap();
        assert_eq!(out.cost.c_imb, 0.0);
        state = out.state_at_next_anchor;
        bridge = Some(out.next_bridge);
    }
}
