//! Full-weight training of the base forecaster on a corpus disjoint from the
//! experiment's buildings.

use feeder_autodiff::{AdamW, AutodiffError, Graph};
use feeder_core::config::{LossKind, PretrainConfig};
use feeder_core::ingest::generate_synthetic_with;
use feeder_core::types::HorizonSpec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{strided_samples, Sample};
use crate::evaluate::forecast_errors;
use crate::finetune::forecast_loss;
use crate::forecaster::Forecaster;
use crate::{LearnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub initial_val_mse: f64,
    pub final_val_mse: f64,
    pub epoch_train_mse: Vec<f64>,
    pub n_train: usize,
    pub n_val: usize,
}

impl PretrainReport {
    /// Relative reduction of validation MSE against the untrained model.
    pub fn improvement(&self) -> f64 {
        1.0 - self.final_val_mse / self.initial_val_mse
    }
}

/// Generates the pretraining corpus and splits it by building: the last sixth
/// of the buildings (at least one) is held out for validation.
pub fn pretrain_corpus(cfg: &PretrainConfig, horizon: &HorizonSpec) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let series = generate_synthetic_with(&cfg.corpus)?;
    let n_val = (series.len() / 6).max(1).min(series.len().saturating_sub(1));
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, s) in series.iter().enumerate() {
        let w = strided_samples(s, horizon, cfg.stride);
        if i + n_val >= series.len() {
            val.extend(w);
        } else {
            train.extend(w);
        }
    }
    Ok((train, val))
}

/// Trains every weight of `model` on the MSE loss.
pub fn pretrain(model: &mut Forecaster, train: &[Sample], val: &[Sample], cfg: &PretrainConfig) -> Result<PretrainReport> {
    if train.is_empty() {
        return Err(LearnError::Empty("pretraining corpus"));
    }
    let initial_val_mse = if val.is_empty() {
        f64::NAN
    } else {
        forecast_errors(model, None, val)?.1
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.lr, 0.0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_train_mse = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let ctx: Vec<&[f64]> = chunk.iter().map(|&i| train[i].context.as_slice()).collect();
            let act: Vec<&[f64]> = chunk.iter().map(|&i| train[i].actual.as_slice()).collect();
            let mut g = Graph::new();
            let pred = model.forward(&mut g, None, &ctx, true)?;
            let loss = forecast_loss(&mut g, pred, &act, LossKind::Mse)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(LearnError::Diverged(format!("pretraining loss {value} in epoch {epoch}")));
            }
            sum += value * chunk.len() as f64;
            g.backward(loss)?;
            match opt.step(&mut model.params, &g.param_grads()) {
                Err(AutodiffError::NonFiniteGradient { name, .. }) => {
                    return Err(LearnError::Diverged(format!("non-finite gradient for `{name}`")))
                }
                other => other?,
            }
        }
        let mse = sum / train.len() as f64;
        log::info!("pretrain epoch {epoch}: train mse {mse:.4}");
        epoch_train_mse.push(mse);
    }
    let final_val_mse = if val.is_empty() {
        f64::NAN
    } else {
        forecast_errors(model, None, val)?.1
    };
    Ok(PretrainReport {
        initial_val_mse,
        final_val_mse,
        epoch_train_mse,
        n_train: train.len(),
        n_val: val.len(),
    })
}
