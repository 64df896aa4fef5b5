mod common;

use feeder_autodiff::gradcheck::check_gradients;
use feeder_autodiff::{apply_adapter, AdapterMethod, Checkpoint, Graph, Tensor};
use feeder_core::config::{AdapterConfig, LossKind, PeftMethod};
use feeder_core::types::HorizonSpec;
use feeder_learn::features::MinMaxScaler;
use feeder_learn::finetune::{adapter_spec, batch_loss};
use feeder_learn::surrogate::SurrogateScalers;
use feeder_learn::{ExogFeatures, Forecaster, LearnError, Sample, SurrogateEnsemble};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn daily_profile(rng: &mut ChaCha8Rng, hours: usize, offset: usize) -> Vec<f64> {
    let level = rng.gen_range(0.3..1.5);
    (0..hours)
        .map(|t| {
            let h = ((t + offset) % 24) as f64;
            level + 0.8 * (std::f64::consts::TAU * (h - 7.0) / 24.0).sin() + rng.gen_range(-0.2..0.2)
        })
        .collect()
}

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    let h = HorizonSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Sample {
            building: 1,
            day: i,
            anchor: 180 + 24 * i,
            context: daily_profile(&mut rng, h.context_hours, 0),
            actual: daily_profile(&mut rng, h.forecast_hours, h.context_hours),
        })
        .collect()
}

/// Forecaster whose weights are all nonzero, so every parameter influences the output.
fn perturbed_forecaster(seed: u64) -> Forecaster {
    let mut f = Forecaster::new(&common::tiny_spec(), &HorizonSpec::default(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let names: Vec<String> = f.params.names().cloned().collect();
    for name in names {
        for v in f.params.get_mut(&name).unwrap().data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    f
}

fn fitted_surrogate(seed: u64) -> SurrogateEnsemble {
    let mut s = SurrogateEnsemble::new(&[12, 6], 42, 3, seed);
    let power = MinMaxScaler { min: -2.0, max: 3.0 };
    s.scalers = Some(SurrogateScalers {
        power,
        exog: [
            MinMaxScaler { min: 0.0, max: 13.5 },
            MinMaxScaler { min: 0.0, max: 1.5 },
            power,
            power,
            MinMaxScaler { min: 0.0, max: 1.5 },
        ],
        target: MinMaxScaler { min: -2.0, max: 12.0 },
    });
    s
}

#[test]
fn forecasts_have_the_horizon_length_and_reject_bad_contexts() {
    let f = perturbed_forecaster(3);
    let s = samples(5, 1);
    let ctx: Vec<&[f64]> = s.iter().map(|x| x.context.as_slice()).collect();
    let out = f.predict(None, &ctx).unwrap();
    assert_eq!(out.len(), 5);
    assert!(out.iter().all(|o| o.len() == 42 && o.iter().all(|v| v.is_finite())));
    assert_eq!(out, f.predict(None, &ctx).unwrap());

    let mut bad = s[0].context.clone();
    bad[17] = f64::NAN;
    assert!(matches!(f.forecast(None, &bad), Err(LearnError::NonFinite { index: 17, .. })));
    assert!(matches!(f.forecast(None, &bad[..100]), Err(LearnError::Length { .. })));
}

#[test]
fn zero_initialized_head_forecasts_the_context_mean() {
    let f = Forecaster::new(&common::tiny_spec(), &HorizonSpec::default(), 0).unwrap();
    let ctx = samples(1, 2).remove(0).context;
    let mean = ctx.iter().sum::<f64>() / ctx.len() as f64;
    let out = f.forecast(None, &ctx).unwrap();
    assert!(out.iter().all(|v| (v - mean).abs() < 1e-12));
}

#[test]
fn adapters_target_four_matrices_per_layer() {
    for n_layers in [1, 2, 3] {
        let mut spec = common::tiny_spec();
        spec.n_layers = n_layers;
        let f = Forecaster::new(&spec, &HorizonSpec::default(), 0).unwrap();
        for peft in [PeftMethod::Lora, PeftMethod::Dora] {
            let mut cfg = AdapterConfig::default();
            cfg.rank = 4;
            let spec = adapter_spec(&cfg, peft);
            let a = apply_adapter(&f.params, &f.linear_layers(), &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(a.layers.len(), 4 * n_layers);
            assert!(a.layers.iter().all(|l| l.contains(".attn.")));
            let b = apply_adapter(&f.params, &f.linear_layers(), &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(a.params.digests(), b.params.digests());
            let per_layer = if spec.method == AdapterMethod::Dora { 3 } else { 2 };
            assert_eq!(a.params.len(), per_layer * 4 * n_layers);
        }
    }
}

#[test]
fn fresh_adapters_leave_forecasts_unchanged() {
    let f = perturbed_forecaster(4);
    let s = samples(3, 3);
    let ctx: Vec<&[f64]> = s.iter().map(|x| x.context.as_slice()).collect();
    let plain = f.predict(None, &ctx).unwrap();
    for peft in [PeftMethod::Lora, PeftMethod::Dora] {
        let mut cfg = AdapterConfig::default();
        cfg.rank = 4;
        let a = apply_adapter(&f.params, &f.linear_layers(), &adapter_spec(&cfg, peft), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let adapted = f.predict(Some(&a), &ctx).unwrap();
        for (p, q) in plain.iter().flatten().zip(adapted.iter().flatten()) {
            assert!((p - q).abs() <= 1e-12, "{p} vs {q}");
        }
    }
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let sur = fitted_surrogate(5);
    let s = samples(4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let forecasts: Vec<f64> = s
        .iter()
        .flat_map(|x| x.actual.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect::<Vec<_>>())
        .collect();
    let actuals: Vec<&[f64]> = s.iter().map(|x| x.actual.as_slice()).collect();
    let exogs: Vec<ExogFeatures> = s.iter().map(|x| ExogFeatures::from_context(rng.gen_range(0.0..13.5), &x.context)).collect();
    let input = Tensor::new(4, 42, forecasts).unwrap();
    let report = check_gradients(&[input], 1e-6, 1e-6, |g, v| {
        let y = sur.forward(g, v[0], &actuals, &exogs).map_err(|e| match e {
            LearnError::Autodiff(e) => e,
            other => panic!("{other}"),
        })?;
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn surrogate_forward_matches_plain_prediction_and_needs_scalers() {
    let sur = fitted_surrogate(7);
    let s = samples(3, 5);
    let actuals: Vec<&[f64]> = s.iter().map(|x| x.actual.as_slice()).collect();
    let exogs: Vec<ExogFeatures> = s.iter().map(|x| ExogFeatures::from_context(4.0, &x.context)).collect();
    let plain = sur.predict_scaled(&actuals, &actuals, &exogs).unwrap();
    let mut g = Graph::new();
    let f = g.constant(Tensor::new(3, 42, actuals.concat()).unwrap());
    let y = sur.forward(&mut g, f, &actuals, &exogs).unwrap();
    for (a, b) in g.value(y).data().iter().zip(&plain) {
        assert!((a - b).abs() < 1e-12);
    }

    let mut one = SurrogateEnsemble::new(&[12, 6], 42, 1, 7);
    one.scalers = sur.scalers;
    let mut same = SurrogateEnsemble::new(&[12, 6], 42, 3, 7);
    same.scalers = sur.scalers;
    let m0 = one.member_params(0);
    for j in 0..3 {
        for (name, t) in m0.iter() {
            *same.params.get_mut(&name.replacen("member0", &format!("member{j}"), 1)).unwrap() = t.clone();
        }
    }
    let a = one.predict_scaled(&actuals, &actuals, &exogs).unwrap();
    let b = same.predict_scaled(&actuals, &actuals, &exogs).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }

    let unfitted = SurrogateEnsemble::new(&[12, 6], 42, 2, 0);
    assert!(matches!(
        unfitted.predict_scaled(&actuals, &actuals, &exogs),
        Err(LearnError::ScalerNotFitted(_))
    ));
}

#[test]
fn decision_focused_loss_gradient_matches_finite_differences() {
    let f = perturbed_forecaster(8);
    let sur = fitted_surrogate(9);
    let s = samples(3, 6);
    let batch: Vec<&Sample> = s.iter().collect();
    let soe = [2.0, 7.5, 11.0];
    for peft in [PeftMethod::Lora, PeftMethod::Dora] {
        let mut cfg = AdapterConfig::default();
        cfg.rank = 2;
        let mut a = apply_adapter(&f.params, &f.linear_layers(), &adapter_spec(&cfg, peft), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let names: Vec<String> = a.params.names().cloned().collect();
        for name in &names {
            for v in a.params.get_mut(name).unwrap().data_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
        }
        let loss_at = |a: &feeder_autodiff::Adapters| {
            let mut g = Graph::new();
            let l = batch_loss(&mut g, &f, Some(a), &batch, Some(&soe), LossKind::Surrogate, Some(&sur)).unwrap();
            g.value(l).data()[0]
        };
        let mut g = Graph::new();
        let l = batch_loss(&mut g, &f, Some(&a), &batch, Some(&soe), LossKind::Surrogate, Some(&sur)).unwrap();
        g.backward(l).unwrap();
        let grads = g.param_grads();
        assert_eq!(grads.keys().cloned().collect::<Vec<_>>(), {
            let mut n = names.clone();
            n.sort();
            n
        });

        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for name in &names {
            for idx in [0, 1, 5] {
                if idx >= a.params.get(name).unwrap().len() {
                    continue;
                }
                let x = a.params.get(name).unwrap().data()[idx];
                a.params.get_mut(name).unwrap().data_mut()[idx] = x + eps;
                let up = loss_at(&a);
                a.params.get_mut(name).unwrap().data_mut()[idx] = x - eps;
                let down = loss_at(&a);
                a.params.get_mut(name).unwrap().data_mut()[idx] = x;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads[name].data()[idx];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-3, "{peft:?}: worst relative error {worst}");
    }
}

#[test]
fn forecaster_checkpoint_round_trip() {
    let f = perturbed_forecaster(10);
    let mut buf = Vec::new();
    f.to_checkpoint().write_to(&mut buf).unwrap();
    let back = Forecaster::from_checkpoint(Checkpoint::read_from(buf.as_slice()).unwrap()).unwrap();
    assert_eq!(back, f);
    let ctx = samples(1, 7).remove(0).context;
    assert_eq!(back.forecast(None, &ctx).unwrap(), f.forecast(None, &ctx).unwrap());

    let sur = fitted_surrogate(11).to_checkpoint();
    assert!(matches!(Forecaster::from_checkpoint(sur), Err(LearnError::BadCheckpoint { .. })));
}

#[test]
fn surrogate_checkpoint_round_trip() {
    let s = fitted_surrogate(12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("surrogate.ckpt");
    s.to_checkpoint().save(&path).unwrap();
    let back = SurrogateEnsemble::from_checkpoint(Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back, s);
    assert!(matches!(
        SurrogateEnsemble::from_checkpoint(perturbed_forecaster(0).to_checkpoint()),
        Err(LearnError::BadCheckpoint { .. })
    ));
}
