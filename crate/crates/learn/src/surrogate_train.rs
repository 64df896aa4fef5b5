//! Surrogate training data from the dispatch simulator, and ensemble training
//! with early stopping.

use feeder_autodiff::{AdamW, Graph, Tensor};
use feeder_core::config::SurrogateConfig;
use feeder_core::dispatch::{simulate_day, BatteryState, DayInputs};
use feeder_core::ingest::{BuildingSplit, Range};
use feeder_core::types::{BatteryParams, CostParams, HorizonSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{day_samples, Sample};
use crate::features::MinMaxScaler;
use crate::forecaster::Forecaster;
use crate::naive::{naive168, naive48};
use crate::stats::spearman;
use crate::surrogate::{ExogFeatures, SurrogateEnsemble, SurrogateScalers, N_EXOG};
use crate::{LearnError, Result};

/// One simulated (building, day, forecast variant) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSample {
    pub building: u32,
    pub day: usize,
    pub variant: String,
    pub forecast: Vec<f64>,
    pub actual: Vec<f64>,
    pub exog: ExogFeatures,
    pub c_imb: f64,
    /// Daily total cost from the simulator, €.
    pub cost: f64,
}

pub const BASE_VARIANTS: [&str; 4] = ["actual", "naive48", "naive168", "pretrained"];

/// Variant names in generation order: each base forecast, clean and with
/// every noise level.
pub fn variant_names(noise_levels: &[f64]) -> Vec<String> {
    let mut out = Vec::new();
    for b in BASE_VARIANTS {
        out.push(b.to_string());
        for s in noise_levels {
            out.push(format!("{b}+n{s}"));
        }
    }
    out
}

fn day_rng(seed: u64, building: u32, day: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((building as u64) << 32) | day as u64);
    rng
}

/// Simulates every forecast variant of every usable day of `range` in
/// `splits`. Each (building, day) draws one state of energy shared by its
/// variants. Days the simulator rejects are skipped with a warning.
#[allow(clippy::too_many_arguments)]
pub fn build_surrogate_dataset(
    splits: &[&BuildingSplit],
    range: Range,
    pretrained: &Forecaster,
    noise_levels: &[f64],
    seed: u64,
    battery: &BatteryParams,
    cost: &CostParams,
    horizon: &HorizonSpec,
) -> Result<Vec<SurrogateSample>> {
    let mut days: Vec<(&BuildingSplit, Sample)> = Vec::new();
    for s in splits {
        for smp in day_samples(s, range, horizon)? {
            days.push((s, smp));
        }
    }
    let ctx: Vec<&[f64]> = days.iter().map(|(_, s)| s.context.as_slice()).collect();
    let model_fc = pretrained.predict(None, &ctx)?;
    let names = variant_names(noise_levels);
    let groups: Vec<Result<Vec<SurrogateSample>>> = days
        .par_iter()
        .zip(model_fc.par_iter())
        .map(|((split, smp), model)| {
            let values = split.series.prosumption();
            let h = horizon.forecast_hours;
            let bases = [
                smp.actual.clone(),
                naive48(values, smp.anchor, h)?,
                naive168(values, smp.anchor, h)?,
                model.clone(),
            ];
            let mut rng = day_rng(seed, smp.building, smp.day);
            let soe = rng.gen_range(battery.e_min..=battery.e_max);
            let exog = ExogFeatures::from_context(soe, &smp.context);
            let mut out = Vec::with_capacity(names.len());
            let mut name = names.iter();
            for base in &bases {
                for sigma in std::iter::once(0.0).chain(noise_levels.iter().copied()) {
                    let forecast: Vec<f64> = if sigma > 0.0 {
                        let n = Normal::new(0.0, sigma).expect("positive sigma");
                        base.iter().map(|v| v + n.sample(&mut rng)).collect()
                    } else {
                        base.clone()
                    };
                    let variant = name.next().expect("one name per variant").clone();
                    let sim = simulate_day(
                        DayInputs {
                            forecast: &forecast,
                            actual: &smp.actual,
                            state_at_anchor: BatteryState::new(soe),
                            bridge_schedule: None,
                        },
                        battery,
                        cost,
                        horizon,
                    );
                    match sim {
                        Ok(o) => out.push(SurrogateSample {
                            building: smp.building,
                            day: smp.day,
                            variant,
                            forecast,
                            actual: smp.actual.clone(),
                            exog,
                            c_imb: o.cost.c_imb,
                            cost: o.cost.c_total,
                        }),
                        Err(e) => log::warn!("building {} day {} {variant}: skipped ({e})", smp.building, smp.day),
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut out = Vec::new();
    for g in groups {
        out.extend(g?);
    }
    Ok(out)
}

/// Scalers fitted on training samples: power over forecasts and actuals,
/// each exogenous feature, and the cost target.
pub fn fit_scalers(samples: &[SurrogateSample]) -> Result<SurrogateScalers> {
    let power = MinMaxScaler::fit(samples.iter().flat_map(|s| s.actual.iter().chain(&s.forecast).copied()))?;
    let mut exog = [power; N_EXOG];
    for (k, sc) in exog.iter_mut().enumerate() {
        *sc = MinMaxScaler::fit(samples.iter().map(|s| s.exog.to_array()[k]))?;
    }
    let target = MinMaxScaler::fit(samples.iter().map(|s| s.cost))?;
    Ok(SurrogateScalers { power, exog, target })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub epochs: Vec<usize>,
    pub best_val_mse: Vec<f64>,
    /// Members restarted after a non-finite loss.
    pub reseeded: Vec<usize>,
    pub val_spearman: Option<f64>,
}

struct Prepared {
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
}

fn prepare(ens: &SurrogateEnsemble, samples: &[SurrogateSample]) -> Result<Prepared> {
    let t = ens.scalers()?.target;
    let mut x = Vec::with_capacity(samples.len() * ens.input_dim());
    for s in samples {
        x.extend(ens.scaled_input(&s.forecast, &s.actual, &s.exog)?);
    }
    Ok(Prepared {
        x,
        y: samples.iter().map(|s| t.transform(s.cost)).collect(),
        n: samples.len(),
    })
}

fn member_mse(ens: &SurrogateEnsemble, j: usize, data: &Prepared, rows: &[usize], trainable: bool) -> Result<(Graph, feeder_autodiff::Var)> {
    let d = ens.input_dim();
    let mut x = Vec::with_capacity(rows.len() * d);
    let mut y = Vec::with_capacity(rows.len());
    for &r in rows {
        x.extend_from_slice(&data.x[r * d..(r + 1) * d]);
        y.push(data.y[r]);
    }
    let mut g = Graph::new();
    let xv = g.constant(Tensor::new(rows.len(), d, x)?);
    let yv = g.constant(Tensor::new(rows.len(), 1, y)?);
    let pred = ens.member_forward(&mut g, j, xv, trainable)?;
    let diff = g.sub(pred, yv)?;
    let sq = g.square(diff);
    let loss = g.mean(sq);
    Ok((g, loss))
}

fn eval_member(ens: &SurrogateEnsemble, j: usize, data: &Prepared) -> Result<f64> {
    let rows: Vec<usize> = (0..data.n).collect();
    let mut total = 0.0;
    for chunk in rows.chunks(1024) {
        let (g, l) = member_mse(ens, j, data, chunk, false)?;
        total += g.value(l).data()[0] * chunk.len() as f64;
    }
    Ok(total / data.n as f64)
}

/// Trains member `j` in place; returns (epochs run, best validation MSE).
fn train_member(ens: &mut SurrogateEnsemble, j: usize, train: &Prepared, val: &Prepared, cfg: &SurrogateConfig, seed: u64) -> Result<(usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xd1ce);
    let mut opt = AdamW::new(cfg.lr, 0.0);
    let mut order: Vec<usize> = (0..train.n).collect();
    let mut best = (eval_member(ens, j, val)?, ens.member_params(j));
    let mut since_best = 0;
    let mut epochs = 0;
    for _ in 0..cfg.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (mut g, loss) = member_mse(ens, j, train, chunk, true)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(LearnError::Diverged(format!("surrogate member {j} loss {value}")));
            }
            g.backward(loss)?;
            opt.step(&mut ens.params, &g.param_grads())
                .map_err(|e| LearnError::Diverged(e.to_string()))?;
        }
        let v = eval_member(ens, j, val)?;
        if !v.is_finite() {
            return Err(LearnError::Diverged(format!("surrogate member {j} validation loss {v}")));
        }
        if v < best.0 {
            best = (v, ens.member_params(j));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    for (name, t) in best.1.iter() {
        ens.params.insert(name.clone(), t.clone());
    }
    Ok((epochs, best.0))
}

/// Fits scalers on `train`, then trains each member from its own seed with
/// early stopping on `val`. A member whose loss becomes non-finite is
/// restarted once from a new seed.
pub fn train_surrogate(
    train: &[SurrogateSample],
    val: &[SurrogateSample],
    cfg: &SurrogateConfig,
    forecast_hours: usize,
) -> Result<(SurrogateEnsemble, SurrogateReport)> {
    if train.is_empty() {
        return Err(LearnError::Empty("surrogate training samples"));
    }
    if val.is_empty() {
        return Err(LearnError::Empty("surrogate validation samples"));
    }
    let mut ens = SurrogateEnsemble::new(&cfg.hidden, forecast_hours, cfg.ensemble_size, cfg.seed);
    ens.scalers = Some(fit_scalers(train)?);
    let tp = prepare(&ens, train)?;
    let vp = prepare(&ens, val)?;
    let mut report = SurrogateReport {
        epochs: Vec::new(),
        best_val_mse: Vec::new(),
        reseeded: Vec::new(),
        val_spearman: None,
    };
    for j in 0..cfg.ensemble_size {
        let seed = cfg.seed.wrapping_add(j as u64);
        let (epochs, best) = match train_member(&mut ens, j, &tp, &vp, cfg, seed) {
            Ok(r) => r,
            Err(LearnError::Diverged(msg)) => {
                log::warn!("{msg}; reseeding member {j}");
                report.reseeded.push(j);
                let reseed = seed.wrapping_add(1 << 32);
                ens.reinit_member(j, reseed);
                train_member(&mut ens, j, &tp, &vp, cfg, reseed)?
            }
            Err(e) => return Err(e),
        };
        log::info!("surrogate member {j}: {epochs} epochs, best val mse {best:.5}");
        report.epochs.push(epochs);
        report.best_val_mse.push(best);
    }
    report.val_spearman = validation_spearman(&ens, val)?;
    Ok((ens, report))
}

/// Spearman correlation between predicted and simulated costs.
pub fn validation_spearman(ens: &SurrogateEnsemble, samples: &[SurrogateSample]) -> Result<Option<f64>> {
    let f: Vec<&[f64]> = samples.iter().map(|s| s.forecast.as_slice()).collect();
    let a: Vec<&[f64]> = samples.iter().map(|s| s.actual.as_slice()).collect();
    let e: Vec<ExogFeatures> = samples.iter().map(|s| s.exog).collect();
    let pred = ens.predict_scaled(&f, &a, &e)?;
    let truth: Vec<f64> = samples.iter().map(|s| s.cost).collect();
    Ok(spearman(&pred, &truth))
}
