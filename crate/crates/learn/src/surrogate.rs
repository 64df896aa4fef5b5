//! Ensemble of small MLPs approximating the daily total cost that a forecast
//! induces in the dispatch simulator.
//!
//! Inputs are the scaled forecast, the scaled actual and five scaled
//! exogenous features; the output is the scaled cost. The ensemble prediction
//! is the mean over members and stays differentiable in the forecast.

use feeder_autodiff::{Checkpoint, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{clamp_scaled, MinMaxScaler};
use crate::{LearnError, Result};

pub const N_EXOG: usize = 5;
pub const CHECKPOINT_KIND: &str = "surrogate-ensemble";

/// State of energy at the schedule start plus summary statistics of the context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExogFeatures {
    pub soe: f64,
    pub ctx_mean: f64,
    pub ctx_min: f64,
    pub ctx_max: f64,
    pub ctx_std: f64,
}

impl ExogFeatures {
    pub fn from_context(soe: f64, context: &[f64]) -> Self {
        let n = context.len().max(1) as f64;
        let mean = context.iter().sum::<f64>() / n;
        let var = context.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            soe,
            ctx_mean: mean,
            ctx_min: context.iter().copied().fold(f64::INFINITY, f64::min),
            ctx_max: context.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ctx_std: var.sqrt(),
        }
    }

    pub fn to_array(&self) -> [f64; N_EXOG] {
        [self.soe, self.ctx_mean, self.ctx_min, self.ctx_max, self.ctx_std]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateScalers {
    /// Shared by forecast and actual prosumption.
    pub power: MinMaxScaler,
    pub exog: [MinMaxScaler; N_EXOG],
    pub target: MinMaxScaler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    hidden: Vec<usize>,
    forecast_hours: usize,
    members: usize,
    scalers: Option<SurrogateScalers>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEnsemble {
    pub hidden: Vec<usize>,
    pub forecast_hours: usize,
    pub members: usize,
    /// Member `j` owns `member{j}.fc{i}.weight` and `.bias`.
    pub params: ParamStore,
    pub scalers: Option<SurrogateScalers>,
}

impl SurrogateEnsemble {
    /// Members initialized from `seed + j`, with uniform ±1/√fan_in weights and biases.
    pub fn new(hidden: &[usize], forecast_hours: usize, members: usize, seed: u64) -> Self {
        let mut s = Self {
            hidden: hidden.to_vec(),
            forecast_hours,
            members,
            params: ParamStore::new(),
            scalers: None,
        };
        for j in 0..members {
            s.reinit_member(j, seed.wrapping_add(j as u64));
        }
        s
    }

    pub fn input_dim(&self) -> usize {
        2 * self.forecast_hours + N_EXOG
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    /// Replaces one member's weights with a fresh draw.
    pub fn reinit_member(&mut self, j: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5u64 << 32);
        for (i, w) in self.widths().windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            self.params
                .insert(format!("member{j}.fc{i}.weight"), Tensor::uniform(w[0], w[1], bound, &mut rng));
            self.params
                .insert(format!("member{j}.fc{i}.bias"), Tensor::uniform(1, w[1], bound, &mut rng));
        }
    }

    pub fn params_per_member(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn member_params(&self, j: usize) -> ParamStore {
        let prefix = format!("member{j}.");
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(&prefix))
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect()
    }

    pub fn scalers(&self) -> Result<&SurrogateScalers> {
        self.scalers.as_ref().ok_or(LearnError::ScalerNotFitted("surrogate"))
    }

    /// Scaled actual and exogenous part of one input row.
    pub fn scaled_context(&self, actual: &[f64], exog: &ExogFeatures) -> Result<Vec<f64>> {
        let s = self.scalers()?;
        if actual.len() != self.forecast_hours {
            return Err(LearnError::Length {
                what: "actual",
                got: actual.len(),
                expected: self.forecast_hours,
            });
        }
        let mut row: Vec<f64> = actual.iter().map(|v| s.power.transform(*v)).collect();
        row.extend(exog.to_array().iter().zip(&s.exog).map(|(v, sc)| clamp_scaled(sc.transform(*v))));
        Ok(row)
    }

    /// Full scaled input row.
    pub fn scaled_input(&self, forecast: &[f64], actual: &[f64], exog: &ExogFeatures) -> Result<Vec<f64>> {
        let s = self.scalers()?;
        if forecast.len() != self.forecast_hours {
            return Err(LearnError::Length {
                what: "forecast",
                got: forecast.len(),
                expected: self.forecast_hours,
            });
        }
        let mut row: Vec<f64> = forecast.iter().map(|v| s.power.transform(*v)).collect();
        row.extend(self.scaled_context(actual, exog)?);
        Ok(row)
    }

    /// One member applied to scaled inputs `x` (`batch × input_dim`).
    pub fn member_forward(&self, g: &mut Graph, j: usize, x: Var, trainable: bool) -> Result<Var> {
        let n = self.hidden.len() + 1;
        let mut h = x;
        for i in 0..n {
            let wn = format!("member{j}.fc{i}.weight");
            let bn = format!("member{j}.fc{i}.bias");
            let w = g.param(&wn, self.params.get(&wn)?, trainable);
            let b = g.param(&bn, self.params.get(&bn)?, trainable);
            h = g.matmul(h, w)?;
            h = g.add(h, b)?;
            if i + 1 < n {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Ensemble-mean scaled cost (`batch × 1`) for a forecast node in kW.
    /// Surrogate weights enter the graph frozen.
    pub fn forward(&self, g: &mut Graph, forecast: Var, actuals: &[&[f64]], exogs: &[ExogFeatures]) -> Result<Var> {
        let s = *self.scalers()?;
        let [b, h] = g.shape(forecast);
        if h != self.forecast_hours || actuals.len() != b || exogs.len() != b {
            return Err(LearnError::Length {
                what: "surrogate batch",
                got: actuals.len().min(exogs.len()),
                expected: b,
            });
        }
        let shifted = g.add_scalar(forecast, -s.power.min);
        let fs = g.scale(shifted, 1.0 / s.power.span());
        let mut rest = Vec::with_capacity(b * (self.input_dim() - h));
        for (a, e) in actuals.iter().zip(exogs) {
            rest.extend(self.scaled_context(a, e)?);
        }
        let rest = g.constant(Tensor::new(b, self.input_dim() - h, rest)?);
        let x = g.concat_cols(&[fs, rest])?;
        self.ensemble_mean(g, x, false)
    }

    fn ensemble_mean(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for j in 0..self.members {
            let y = self.member_forward(g, j, x, trainable)?;
            acc = Some(match acc {
                Some(a) => g.add(a, y)?,
                None => y,
            });
        }
        let acc = acc.ok_or(LearnError::Empty("surrogate ensemble"))?;
        Ok(g.scale(acc, 1.0 / self.members as f64))
    }

    /// Ensemble-mean scaled cost for plain inputs.
    pub fn predict_scaled(&self, forecasts: &[&[f64]], actuals: &[&[f64]], exogs: &[ExogFeatures]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(forecasts.len());
        for start in (0..forecasts.len()).step_by(256) {
            let end = (start + 256).min(forecasts.len());
            let mut rows = Vec::with_capacity((end - start) * self.input_dim());
            for i in start..end {
                rows.extend(self.scaled_input(forecasts[i], actuals[i], &exogs[i])?);
            }
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(end - start, self.input_dim(), rows)?);
            let y = self.ensemble_mean(&mut g, x, false)?;
            out.extend_from_slice(g.value(y).data());
        }
        Ok(out)
    }

    /// Ensemble prediction mapped back to €.
    pub fn predict_cost(&self, forecasts: &[&[f64]], actuals: &[&[f64]], exogs: &[ExogFeatures]) -> Result<Vec<f64>> {
        let t = self.scalers()?.target;
        Ok(self
            .predict_scaled(forecasts, actuals, exogs)?
            .into_iter()
            .map(|v| t.inverse(v))
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = Meta {
            hidden: self.hidden.clone(),
            forecast_hours: self.forecast_hours,
            members: self.members,
            scalers: self.scalers,
        };
        Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::to_value(meta).expect("metadata serializes"),
            self.params.clone(),
        )
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let bad = |message: String| LearnError::BadCheckpoint {
            expected: CHECKPOINT_KIND,
            message,
        };
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(bad(format!("kind is `{}`", ckpt.kind)));
        }
        let meta: Meta = serde_json::from_value(ckpt.metadata).map_err(|e| bad(e.to_string()))?;
        let s = Self {
            hidden: meta.hidden,
            forecast_hours: meta.forecast_hours,
            members: meta.members,
            params: ckpt.tensors,
            scalers: meta.scalers,
        };
        let template = Self::new(&s.hidden, s.forecast_hours, s.members, 0);
        for (name, t) in template.params.iter() {
            if s.params.get(name).ok().map(|x| x.shape()) != Some(t.shape()) {
                return Err(bad(format!("tensor `{name}` missing or misshapen")));
            }
        }
        Ok(s)
    }
}
