//! Patch-based attention encoder that maps a week of hourly prosumption to
//! the next 42 hours.
//!
//! Each context window is normalized by its own mean and standard deviation,
//! cut into patches, embedded, passed through pre-norm transformer layers and
//! projected to the horizon by a linear head. The head starts at zero, so an
//! untrained model forecasts the context mean.

use feeder_autodiff::{effective_weight, Adapters, Checkpoint, Graph, ParamStore, Tensor, Var};
use feeder_core::config::ForecasterSpec;
use feeder_core::types::HorizonSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{LearnError, Result};

/// Lower bound on the per-window scale, in kW.
const STD_FLOOR: f64 = 1e-2;

/// Largest batch used by [`Forecaster::predict`].
const PREDICT_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterShape {
    pub spec: ForecasterSpec,
    pub context_hours: usize,
    pub forecast_hours: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub shape: ForecasterShape,
    pub params: ParamStore,
}

pub const CHECKPOINT_KIND: &str = "forecaster";

impl Forecaster {
    /// Fresh model with uniform ±1/√fan_in weights, zero biases and a zero head.
    pub fn new(spec: &ForecasterSpec, horizon: &HorizonSpec, seed: u64) -> Result<Self> {
        let shape = ForecasterShape {
            spec: spec.clone(),
            context_hours: horizon.context_hours,
            forecast_hours: horizon.forecast_hours,
        };
        if spec.patch_size == 0 || horizon.context_hours % spec.patch_size != 0 {
            return Err(LearnError::Config(format!(
                "context of {} hours is not divisible by patch size {}",
                horizon.context_hours, spec.patch_size
            )));
        }
        if spec.n_heads == 0 || spec.d_model % spec.n_heads != 0 {
            return Err(LearnError::Config(format!(
                "d_model {} is not divisible by {} heads",
                spec.d_model, spec.n_heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = spec.d_model;
        let mut linear = |params: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, zero: bool| {
            let w = if zero {
                Tensor::zeros(fan_in, fan_out)
            } else {
                Tensor::uniform(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), &mut rng)
            };
            params.insert(format!("{name}.weight"), w);
            params.insert(format!("{name}.bias"), Tensor::zeros(1, fan_out));
        };
        linear(&mut params, "patch_embed", spec.patch_size, d, false);
        for i in 0..spec.n_layers {
            for p in ["q_proj", "k_proj", "v_proj", "out_proj"] {
                linear(&mut params, &format!("layers.{i}.attn.{p}"), d, d, false);
            }
            linear(&mut params, &format!("layers.{i}.ff.fc1"), d, spec.ff_dim, false);
            linear(&mut params, &format!("layers.{i}.ff.fc2"), spec.ff_dim, d, false);
        }
        let n_patches = shape.n_patches();
        linear(&mut params, "head", n_patches * d, horizon.forecast_hours, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        params.insert("pos_embed", Tensor::uniform(n_patches, d, 0.1, &mut rng));
        let mut norms = vec!["final_norm".to_string()];
        for i in 0..spec.n_layers {
            norms.push(format!("layers.{i}.norm1"));
            norms.push(format!("layers.{i}.norm2"));
        }
        for n in norms {
            params.insert(format!("{n}.gamma"), Tensor::full(1, d, 1.0));
            params.insert(format!("{n}.beta"), Tensor::zeros(1, d));
        }
        Ok(Self { shape, params })
    }

    pub fn spec(&self) -> &ForecasterSpec {
        &self.shape.spec
    }

    /// Names of every linear layer, in forward order.
    pub fn linear_layers(&self) -> Vec<String> {
        let mut out = vec!["patch_embed".to_string()];
        for i in 0..self.spec().n_layers {
            for p in ["q_proj", "k_proj", "v_proj", "out_proj"] {
                out.push(format!("layers.{i}.attn.{p}"));
            }
            out.push(format!("layers.{i}.ff.fc1"));
            out.push(format!("layers.{i}.ff.fc2"));
        }
        out.push("head".to_string());
        out
    }

    /// Builds the forward pass for a batch of contexts and returns the
    /// `batch × forecast_hours` forecast in kW.
    ///
    /// Base weights are trainable only when `train_base` is set; adapter
    /// factors are always trainable.
    pub fn forward(
        &self,
        g: &mut Graph,
        adapters: Option<&Adapters>,
        contexts: &[&[f64]],
        train_base: bool,
    ) -> Result<Var> {
        let spec = self.spec();
        let (c, d) = (self.shape.context_hours, spec.d_model);
        let b = contexts.len();
        if b == 0 {
            return Err(LearnError::Empty("forecast batch"));
        }
        let mut x = Vec::with_capacity(b * c);
        let mut means = Vec::with_capacity(b);
        let mut stds = Vec::with_capacity(b);
        for ctx in contexts {
            if ctx.len() != c {
                return Err(LearnError::Length {
                    what: "context",
                    got: ctx.len(),
                    expected: c,
                });
            }
            if let Some(index) = ctx.iter().position(|v| !v.is_finite()) {
                return Err(LearnError::NonFinite { what: "context", index });
            }
            let mean = ctx.iter().sum::<f64>() / c as f64;
            let var = ctx.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let std = var.sqrt().max(STD_FLOOR);
            x.extend(ctx.iter().map(|v| (v - mean) / std));
            means.push(mean);
            stds.push(std);
        }
        let n_patches = self.shape.n_patches();
        let input = g.constant(Tensor::new(b * n_patches, spec.patch_size, x)?);
        let p = |g: &mut Graph, name: &str| -> Result<Var> { Ok(g.param(name, self.params.get(name)?, train_base)) };

        let mut h = self.linear(g, adapters, "patch_embed", input, train_base)?;
        let pos = p(g, "pos_embed")?;
        let pos = g.repeat_rows(pos, b);
        h = g.add(h, pos)?;
        for i in 0..spec.n_layers {
            let pre = format!("layers.{i}");
            let n1 = self.norm(g, &format!("{pre}.norm1"), h, train_base)?;
            let q = self.linear(g, adapters, &format!("{pre}.attn.q_proj"), n1, train_base)?;
            let k = self.linear(g, adapters, &format!("{pre}.attn.k_proj"), n1, train_base)?;
            let v = self.linear(g, adapters, &format!("{pre}.attn.v_proj"), n1, train_base)?;
            let a = g.attention(q, k, v, b, spec.n_heads)?;
            let o = self.linear(g, adapters, &format!("{pre}.attn.out_proj"), a, train_base)?;
            h = g.add(h, o)?;
            let n2 = self.norm(g, &format!("{pre}.norm2"), h, train_base)?;
            let f = self.linear(g, adapters, &format!("{pre}.ff.fc1"), n2, train_base)?;
            let f = g.relu(f);
            let f = self.linear(g, adapters, &format!("{pre}.ff.fc2"), f, train_base)?;
            h = g.add(h, f)?;
        }
        let h = self.norm(g, "final_norm", h, train_base)?;
        let flat = g.reshape(h, b, n_patches * d)?;
        let out = self.linear(g, adapters, "head", flat, train_base)?;
        let std = g.constant(Tensor::new(b, 1, stds)?);
        let mean = g.constant(Tensor::new(b, 1, means)?);
        let scaled = g.mul(out, std)?;
        Ok(g.add(scaled, mean)?)
    }

    fn linear(&self, g: &mut Graph, adapters: Option<&Adapters>, name: &str, x: Var, train_base: bool) -> Result<Var> {
        let w = effective_weight(g, &self.params, adapters, name, train_base)?;
        let bias = format!("{name}.bias");
        let b = g.param(&bias, self.params.get(&bias)?, train_base);
        let y = g.matmul(x, w)?;
        Ok(g.add(y, b)?)
    }

    fn norm(&self, g: &mut Graph, name: &str, x: Var, train_base: bool) -> Result<Var> {
        let gamma = format!("{name}.gamma");
        let beta = format!("{name}.beta");
        let gv = g.param(&gamma, self.params.get(&gamma)?, train_base);
        let bv = g.param(&beta, self.params.get(&beta)?, train_base);
        Ok(g.layer_norm(x, gv, bv)?)
    }

    /// Point forecasts for each context.
    pub fn predict(&self, adapters: Option<&Adapters>, contexts: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(contexts.len());
        for chunk in contexts.chunks(PREDICT_BATCH) {
            let mut g = Graph::new();
            let y = self.forward(&mut g, adapters, chunk, false)?;
            let t = g.value(y);
            out.extend((0..t.rows()).map(|r| t.row_slice(r).to_vec()));
        }
        Ok(out)
    }

    pub fn forecast(&self, adapters: Option<&Adapters>, context: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(adapters, &[context])?.remove(0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::to_value(&self.shape).expect("shape serializes"),
            self.params.clone(),
        )
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(LearnError::BadCheckpoint {
                expected: CHECKPOINT_KIND,
                message: format!("kind is `{}`", ckpt.kind),
            });
        }
        let shape: ForecasterShape = serde_json::from_value(ckpt.metadata).map_err(|e| LearnError::BadCheckpoint {
            expected: CHECKPOINT_KIND,
            message: e.to_string(),
        })?;
        let horizon = HorizonSpec {
            context_hours: shape.context_hours,
            forecast_hours: shape.forecast_hours,
            ..HorizonSpec::default()
        };
        let template = Self::new(&shape.spec, &horizon, 0)?;
        for (name, t) in template.params.iter() {
            match ckpt.tensors.get(name) {
                Ok(found) if found.shape() == t.shape() => {}
                _ => {
                    return Err(LearnError::BadCheckpoint {
                        expected: CHECKPOINT_KIND,
                        message: format!("tensor `{name}` missing or misshapen"),
                    })
                }
            }
        }
        Ok(Self {
            shape,
            params: ckpt.tensors,
        })
    }
}

impl ForecasterShape {
    pub fn n_patches(&self) -> usize {
        self.context_hours / self.spec.patch_size
    }
}
