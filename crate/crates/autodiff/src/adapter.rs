//! LoRA and DoRA reparameterizations of linear layers.
//!
//! A linear layer `name` owns `name.weight` of shape `in × out` (inputs
//! multiply from the left), so each column of the weight is one output. The
//! adapter adds `name.lora_B` (`in × r`, zero), `name.lora_A` (`r × out`,
//! uniform in ±1/√r) and, for DoRA, the magnitude row `name.dora_m`
//! (`1 × out`, the column norms of the frozen weight).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterMethod {
    Lora,
    Dora,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub method: AdapterMethod,
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    /// Last name segment of the linear layers to adapt.
    pub targets: Vec<String>,
}

impl AdapterSpec {
    pub fn new(method: AdapterMethod) -> Self {
        Self {
            method,
            rank: 8,
            alpha: 32.0,
            dropout: 0.0,
            targets: ["v_proj", "q_proj", "k_proj", "out_proj"].map(String::from).to_vec(),
        }
    }

    /// Multiplier applied to `B·A`.
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Trainable adapter factors for a set of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapters {
    pub spec: AdapterSpec,
    /// Adapted layer names in application order.
    pub layers: Vec<String>,
    pub params: ParamStore,
}

impl Adapters {
    pub fn adapts(&self, layer: &str) -> bool {
        self.layers.iter().any(|l| l == layer)
    }

    /// Number of trainable adapter values.
    pub fn n_trainable(&self) -> usize {
        self.params.n_values()
    }
}

fn matches_target(layer: &str, target: &str) -> bool {
    layer.rsplit('.').next() == Some(target)
}

/// Creates adapters for every linear layer in `linear_layers` whose last name
/// segment is one of the spec's targets.
pub fn apply_adapter<R: Rng>(
    base: &ParamStore,
    linear_layers: &[String],
    spec: &AdapterSpec,
    rng: &mut R,
) -> Result<Adapters, AutodiffError> {
    for target in &spec.targets {
        if !linear_layers.iter().any(|l| matches_target(l, target)) {
            return Err(AutodiffError::NoMatchingTarget {
                target: target.clone(),
                available: linear_layers.to_vec(),
            });
        }
    }
    if spec.rank == 0 {
        return Err(AutodiffError::BadArgument {
            op: "apply_adapter",
            message: "rank must be positive".into(),
        });
    }
    let mut params = ParamStore::new();
    let mut layers = Vec::new();
    let bound = 1.0 / (spec.rank as f64).sqrt();
    for layer in linear_layers {
        if !spec.targets.iter().any(|t| matches_target(layer, t)) {
            continue;
        }
        let w0 = base.get(&format!("{layer}.weight"))?;
        let [d, k] = w0.shape();
        if spec.rank >= d.min(k) {
            return Err(AutodiffError::RankTooLarge {
                layer: layer.clone(),
                rank: spec.rank,
                rows: d,
                cols: k,
            });
        }
        params.insert(format!("{layer}.lora_B"), Tensor::zeros(d, spec.rank));
        params.insert(format!("{layer}.lora_A"), Tensor::uniform(spec.rank, k, bound, rng));
        if spec.method == AdapterMethod::Dora {
            params.insert(format!("{layer}.dora_m"), w0.col_norms());
        }
        layers.push(layer.clone());
    }
    Ok(Adapters {
        spec: spec.clone(),
        layers,
        params,
    })
}

/// Weight of `layer` inside `g`: the plain weight, or the adapted weight when
/// `adapters` covers the layer. Base weights are trainable only when
/// `train_base` is set and the layer is not adapted.
pub fn effective_weight(
    g: &mut Graph,
    base: &ParamStore,
    adapters: Option<&Adapters>,
    layer: &str,
    train_base: bool,
) -> Result<Var, AutodiffError> {
    let name = format!("{layer}.weight");
    let adapter = adapters.filter(|a| a.adapts(layer));
    let w0 = g.param(&name, base.get(&name)?, train_base && adapter.is_none());
    let Some(ad) = adapter else { return Ok(w0) };
    let b_name = format!("{layer}.lora_B");
    let a_name = format!("{layer}.lora_A");
    let b = g.param(&b_name, ad.params.get(&b_name)?, true);
    let a = g.param(&a_name, ad.params.get(&a_name)?, true);
    let ba = g.matmul(b, a)?;
    let delta = g.scale(ba, ad.spec.scale());
    let v = g.add(w0, delta)?;
    match ad.spec.method {
        AdapterMethod::Lora => Ok(v),
        AdapterMethod::Dora => {
            let m_name = format!("{layer}.dora_m");
            let m = g.param(&m_name, ad.params.get(&m_name)?, true);
            let norm = g.col_norm(v);
            let dir = g.div(v, norm)?;
            g.mul(dir, m)
        }
    }
}

/// Folds the adapters into plain weights.
pub fn merge_adapter(base: &ParamStore, adapters: &Adapters) -> Result<ParamStore, AutodiffError> {
    let mut merged = base.clone();
    for layer in &adapters.layers {
        let mut g = Graph::new();
        let w = effective_weight(&mut g, base, Some(adapters), layer, false)?;
        *merged.get_mut(&format!("{layer}.weight"))? = g.value(w).clone();
    }
    Ok(merged)
}
