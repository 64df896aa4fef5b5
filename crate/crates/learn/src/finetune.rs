//! Adapter fine-tuning of the base forecaster on forecast-quality losses or
//! on the surrogate's predicted decision cost.

use std::collections::BTreeSet;

use feeder_autodiff::{apply_adapter, AdamW, AdapterMethod, AdapterSpec, Adapters, AutodiffError, Graph, Tensor, Var};
use feeder_core::config::{AdapterConfig, FineTuneConfig, FineTuneMode, LossKind, PeftMethod};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::forecaster::Forecaster;
use crate::surrogate::{ExogFeatures, SurrogateEnsemble};
use crate::{LearnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FineTuneJob {
    pub mode: FineTuneMode,
    pub loss: LossKind,
    pub peft: PeftMethod,
    pub seed: u64,
    /// Target building of a local job.
    pub building: Option<u32>,
}

impl FineTuneJob {
    pub fn id(&self) -> String {
        let mut s = format!("{}-{}-{}-s{}", self.mode, self.loss, self.peft, self.seed);
        if let Some(b) = self.building {
            s.push_str(&format!("-b{b}"));
        }
        s
    }
}

/// Training and validation samples of one job. The state-of-energy vectors
/// are required for the surrogate loss and align with the samples.
#[derive(Debug, Clone, Default)]
pub struct FineTuneData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub train_soe: Option<Vec<f64>>,
    pub val_soe: Option<Vec<f64>>,
}

impl FineTuneData {
    pub fn buildings(&self) -> BTreeSet<u32> {
        self.train.iter().chain(&self.val).map(|s| s.building).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneReport {
    pub job_id: String,
    pub initial_val_loss: f64,
    pub final_val_loss: f64,
    pub epoch_train_loss: Vec<f64>,
    pub lr: f64,
    pub lr_halved: bool,
    pub n_train: usize,
}

pub fn adapter_spec(cfg: &AdapterConfig, peft: PeftMethod) -> AdapterSpec {
    AdapterSpec {
        method: match peft {
            PeftMethod::Lora => AdapterMethod::Lora,
            PeftMethod::Dora => AdapterMethod::Dora,
        },
        rank: cfg.rank,
        alpha: cfg.alpha,
        dropout: cfg.dropout,
        targets: cfg.targets.clone(),
    }
}

/// Mean squared or absolute error of `pred` against the actuals.
pub fn forecast_loss(g: &mut Graph, pred: Var, actuals: &[&[f64]], loss: LossKind) -> Result<Var> {
    let [b, h] = g.shape(pred);
    let flat: Vec<f64> = actuals.iter().flat_map(|a| a.iter().copied()).collect();
    let y = g.constant(Tensor::new(b, h, flat)?);
    let d = g.sub(pred, y)?;
    let e = match loss {
        LossKind::Mse => g.square(d),
        LossKind::Mae => g.abs(d),
        LossKind::Surrogate => {
            return Err(LearnError::Config("the surrogate loss needs the surrogate ensemble".into()))
        }
    };
    Ok(g.mean(e))
}

/// Scalar loss of one batch; `soe` must be given for the surrogate loss.
pub fn batch_loss(
    g: &mut Graph,
    base: &Forecaster,
    adapters: Option<&Adapters>,
    batch: &[&Sample],
    soe: Option<&[f64]>,
    loss: LossKind,
    surrogate: Option<&SurrogateEnsemble>,
) -> Result<Var> {
    let contexts: Vec<&[f64]> = batch.iter().map(|s| s.context.as_slice()).collect();
    let actuals: Vec<&[f64]> = batch.iter().map(|s| s.actual.as_slice()).collect();
    let pred = base.forward(g, adapters, &contexts, false)?;
    match loss {
        LossKind::Mse | LossKind::Mae => forecast_loss(g, pred, &actuals, loss),
        LossKind::Surrogate => {
            let sur = surrogate.ok_or_else(|| LearnError::Config("surrogate loss without an ensemble".into()))?;
            let soe = soe.ok_or_else(|| LearnError::Config("surrogate loss without state of energy".into()))?;
            if soe.len() != batch.len() {
                return Err(LearnError::Length {
                    what: "state of energy",
                    got: soe.len(),
                    expected: batch.len(),
                });
            }
            let exogs: Vec<ExogFeatures> = batch
                .iter()
                .zip(soe)
                .map(|(s, &e)| ExogFeatures::from_context(e, &s.context))
                .collect();
            let cost = sur.forward(g, pred, &actuals, &exogs)?;
            Ok(g.mean(cost))
        }
    }
}

fn dataset_loss(
    base: &Forecaster,
    adapters: &Adapters,
    samples: &[Sample],
    soe: Option<&[f64]>,
    loss: LossKind,
    surrogate: Option<&SurrogateEnsemble>,
    batch_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(LearnError::Empty("validation samples"));
    }
    let mut total = 0.0;
    for (i, chunk) in samples.chunks(batch_size.max(1)).enumerate() {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let s = soe.map(|v| &v[i * batch_size..i * batch_size + chunk.len()]);
        let mut g = Graph::new();
        let l = batch_loss(&mut g, base, Some(adapters), &refs, s, loss, surrogate)?;
        total += g.value(l).data()[0] * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Losses above this are treated as divergence.
const EXPLODED: f64 = 1e8;

/// Trains fresh adapters on top of the frozen `base`.
///
/// The seed drives both the adapter initialization and the batch order. Runs
/// exactly `cfg.epochs` epochs. If the loss or a gradient becomes non-finite
/// the job restarts once at half the learning rate, then gives up.
pub fn finetune(
    base: &Forecaster,
    job: &FineTuneJob,
    adapter_cfg: &AdapterConfig,
    cfg: &FineTuneConfig,
    data: &FineTuneData,
    surrogate: Option<&SurrogateEnsemble>,
) -> Result<(Adapters, FineTuneReport)> {
    if data.train.is_empty() {
        return Err(LearnError::Empty("fine-tune training samples"));
    }
    if job.loss == LossKind::Surrogate {
        surrogate
            .ok_or_else(|| LearnError::Config("surrogate loss without an ensemble".into()))?
            .scalers()?;
        if data.train_soe.as_ref().map(Vec::len) != Some(data.train.len())
            || data.val_soe.as_ref().map(Vec::len) != Some(data.val.len())
        {
            return Err(LearnError::Config("state of energy missing for some samples".into()));
        }
    }
    let before = base.params.digests();
    let mut lr = cfg.lr;
    for attempt in 0..2 {
        match run_job(base, job, adapter_cfg, cfg, data, surrogate, lr) {
            Ok((adapters, mut report)) => {
                report.lr_halved = attempt > 0;
                let changed: Vec<String> = base
                    .params
                    .digests()
                    .into_iter()
                    .filter(|(k, v)| before.get(k) != Some(v))
                    .map(|(k, _)| k)
                    .collect();
                if !changed.is_empty() {
                    return Err(LearnError::FreezeViolation(changed));
                }
                return Ok((adapters, report));
            }
            Err(LearnError::Diverged(msg)) if attempt == 0 => {
                log::warn!("{}: {msg}; retrying at half learning rate", job.id());
                lr *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("second attempt always returns")
}

fn run_job(
    base: &Forecaster,
    job: &FineTuneJob,
    adapter_cfg: &AdapterConfig,
    cfg: &FineTuneConfig,
    data: &FineTuneData,
    surrogate: Option<&SurrogateEnsemble>,
    lr: f64,
) -> Result<(Adapters, FineTuneReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let spec = adapter_spec(adapter_cfg, job.peft);
    let mut adapters = apply_adapter(&base.params, &base.linear_layers(), &spec, &mut rng)?;
    let bs = cfg.batch_size.max(1);
    let val_loss = |a: &Adapters| -> Result<f64> {
        if data.val.is_empty() {
            return Ok(f64::NAN);
        }
        dataset_loss(base, a, &data.val, data.val_soe.as_deref(), job.loss, surrogate, bs)
    };
    let initial_val_loss = val_loss(&adapters)?;
    let mut opt = AdamW::new(lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epoch_train_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(bs) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let soe: Option<Vec<f64>> = data.train_soe.as_ref().map(|v| chunk.iter().map(|&i| v[i]).collect());
            let mut g = Graph::new();
            let loss = batch_loss(&mut g, base, Some(&adapters), &batch, soe.as_deref(), job.loss, surrogate)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() || value.abs() > EXPLODED {
                return Err(LearnError::Diverged(format!("batch loss {value}")));
            }
            sum += value * chunk.len() as f64;
            g.backward(loss)?;
            let grads = g.param_grads();
            let foreign: Vec<String> = grads.keys().filter(|k| !adapters.params.contains(k)).cloned().collect();
            if !foreign.is_empty() {
                return Err(LearnError::FreezeViolation(foreign));
            }
            match opt.step(&mut adapters.params, &grads) {
                Err(AutodiffError::NonFiniteGradient { name, .. }) => {
                    return Err(LearnError::Diverged(format!("non-finite gradient for `{name}`")))
                }
                other => other?,
            }
        }
        epoch_train_loss.push(sum / data.train.len() as f64);
    }
    let final_val_loss = val_loss(&adapters)?;
    Ok((
        adapters,
        FineTuneReport {
            job_id: job.id(),
            initial_val_loss,
            final_val_loss,
            epoch_train_loss,
            lr,
            lr_halved: false,
            n_train: data.train.len(),
        },
    ))
}
