//! Declarative description of one pipeline run, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{SplitSpec, SyntheticSpec, SyntheticStyle};
use crate::types::{BatteryParams, CostParams, HorizonSpec, HOURS_PER_DAY};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineTuneMode {
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Surrogate,
    Mse,
    Mae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeftMethod {
    Lora,
    Dora,
}

macro_rules! display_as_serde_name {
    ($($t:ty => { $($v:ident => $s:literal),* }),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),* })
            }
        }
        impl std::str::FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($s => Ok(Self::$v),)*
                    other => Err(format!("unknown value `{other}`")),
                }
            }
        }
    )*};
}

display_as_serde_name! {
    FineTuneMode => { Global => "global", Local => "local" },
    LossKind => { Surrogate => "surrogate", Mse => "mse", Mae => "mae" },
    PeftMethod => { Lora => "lora", Dora => "dora" }
}

/// Where building data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Dataset file (canonical, long or wide layout). Synthetic data is used when absent.
    pub path: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            synthetic: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterSpec {
    pub patch_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
}

impl Default for ForecasterSpec {
    fn default() -> Self {
        Self {
            patch_size: 6,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            ff_dim: 256,
        }
    }
}

pub const ADAPTER_TARGETS: [&str; 4] = ["q_proj", "k_proj", "v_proj", "out_proj"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub targets: Vec<String>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 32.0,
            dropout: 0.0,
            targets: ADAPTER_TARGETS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Pretraining of the base forecaster on a separate corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub corpus: SyntheticSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Forecast windows start every `stride` hours.
    pub stride: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            corpus: SyntheticSpec {
                n_buildings: 60,
                n_days: 365,
                seed: 1_000_003,
                style: SyntheticStyle::Generic,
                first_id: 10_001,
                ..SyntheticSpec::default()
            },
            epochs: 8,
            batch_size: 32,
            lr: 1e-3,
            stride: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub hidden: Vec<usize>,
    pub ensemble_size: usize,
    /// Standard deviations (kW) of the noise added to each base forecast.
    pub noise_levels: Vec<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            hidden: vec![48, 24],
            ensemble_size: 5,
            noise_levels: vec![0.1, 0.3, 0.6, 1.0],
            max_epochs: 200,
            patience: 5,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 0.01,
        }
    }
}

/// Grid of fine-tune cells to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    pub modes: Vec<FineTuneMode>,
    pub losses: Vec<LossKind>,
    pub pefts: Vec<PeftMethod>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            modes: vec![FineTuneMode::Global, FineTuneMode::Local],
            losses: vec![LossKind::Surrogate, LossKind::Mse, LossKind::Mae],
            pefts: vec![PeftMethod::Lora, PeftMethod::Dora],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataConfig,
    pub battery: BatteryParams,
    pub cost: CostParams,
    pub horizon: HorizonSpec,
    pub split: SplitSpec,
    pub forecaster: ForecasterSpec,
    pub adapter: AdapterConfig,
    pub pretrain: PretrainConfig,
    pub surrogate: SurrogateConfig,
    pub finetune: FineTuneConfig,
    pub experiment: ExperimentGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "feeder".to_string(),
            data: DataConfig::default(),
            battery: BatteryParams::default(),
            cost: CostParams::default(),
            horizon: HorizonSpec::default(),
            split: SplitSpec::default(),
            forecaster: ForecasterSpec::default(),
            adapter: AdapterConfig::default(),
            pretrain: PretrainConfig::default(),
            surrogate: SurrogateConfig::default(),
            finetune: FineTuneConfig::default(),
            experiment: ExperimentGrid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

/// One failed check; `field` is the dotted config key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Lists every violated invariant; an empty list means the config is usable.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |ok: bool, field: &str, message: String| {
        if !ok {
            out.push(Violation {
                field: field.to_string(),
                message,
            });
        }
    };

    let b = &cfg.battery;
    check(b.p_min < 0.0, "battery.p_min", format!("must be negative, got {}", b.p_min));
    check(b.p_max > 0.0, "battery.p_max", format!("must be positive, got {}", b.p_max));
    check(
        b.e_min <= b.e_init && b.e_init <= b.e_max,
        "battery.e_init",
        format!("{} is outside [{}, {}]", b.e_init, b.e_min, b.e_max),
    );
    check((0.0..1.0).contains(&b.mu), "battery.mu", format!("must lie in [0, 1), got {}", b.mu));

    let c = &cfg.cost;
    for (name, v) in [
        ("cq_plus", c.cq_plus),
        ("cl_plus", c.cl_plus),
        ("cq_minus", c.cq_minus),
        ("cl_minus", c.cl_minus),
        ("cq_delta", c.cq_delta),
        ("cl_delta", c.cl_delta),
        ("alpha", c.alpha),
    ] {
        check(v >= 0.0 && v.is_finite(), &format!("cost.{name}"), format!("must be a non-negative number, got {v}"));
    }
    check(
        c.cl_plus >= c.cl_minus,
        "cost.cl_plus",
        format!(
            "must be at least cl_minus ({}) so that importing and exporting at once never pays",
            c.cl_minus
        ),
    );

    let h = &cfg.horizon;
    check(
        h.schedule_start_offset + h.schedule_steps <= h.forecast_hours,
        "horizon",
        format!(
            "schedule_start_offset + schedule_steps = {} exceeds forecast_hours = {}",
            h.schedule_start_offset + h.schedule_steps,
            h.forecast_hours
        ),
    );
    check(
        (h.anchor_hour + h.schedule_start_offset) % HOURS_PER_DAY == 0,
        "horizon.schedule_start_offset",
        "schedules must start at midnight".to_string(),
    );
    check(h.anchor_hour < HOURS_PER_DAY, "horizon.anchor_hour", "must be an hour of the day".to_string());
    check(h.schedule_steps >= 1, "horizon.schedule_steps", "must be positive".to_string());
    check(
        h.schedule_start_offset <= HOURS_PER_DAY && h.schedule_steps >= HOURS_PER_DAY - h.schedule_start_offset,
        "horizon",
        "each schedule must cover the hours until the next schedule takes over".to_string(),
    );

    let f = &cfg.forecaster;
    check(
        f.patch_size > 0 && h.context_hours % f.patch_size == 0,
        "forecaster.patch_size",
        format!("must divide context_hours ({})", h.context_hours),
    );
    check(
        f.n_heads > 0 && f.d_model % f.n_heads == 0,
        "forecaster.n_heads",
        format!("must divide d_model ({})", f.d_model),
    );
    check(f.n_layers >= 1, "forecaster.n_layers", "must be positive".to_string());
    check(f.ff_dim >= 1, "forecaster.ff_dim", "must be positive".to_string());

    let a = &cfg.adapter;
    check(
        a.rank >= 1 && a.rank < f.d_model,
        "adapter.rank",
        format!("must lie in [1, {}) for {}x{} projections", f.d_model, f.d_model, f.d_model),
    );
    check(a.alpha > 0.0, "adapter.alpha", "must be positive".to_string());
    check(a.dropout == 0.0, "adapter.dropout", "adapter dropout is not supported".to_string());
    for t in &a.targets {
        check(
            ADAPTER_TARGETS.contains(&t.as_str()),
            "adapter.targets",
            format!("unknown module `{t}`, available: {}", ADAPTER_TARGETS.join(", ")),
        );
    }
    check(!a.targets.is_empty(), "adapter.targets", "must name at least one module".to_string());

    let s = &cfg.split;
    for p in s.date_problems() {
        check(false, "split", p);
    }
    if let Some(e) = s.overlap() {
        check(false, "split", e.to_string());
    }

    match &cfg.data.path {
        Some(p) => check(p.exists(), "data.path", format!("{} does not exist", p.display())),
        None => {
            let syn = &cfg.data.synthetic;
            check(syn.n_days >= 14, "data.synthetic.n_days", "must be at least 14".to_string());
            check(syn.n_buildings >= 1, "data.synthetic.n_buildings", "must be positive".to_string());
        }
    }
    let pc = &cfg.pretrain.corpus;
    check(pc.n_days >= 14, "pretrain.corpus.n_days", "must be at least 14".to_string());
    check(pc.n_buildings >= 1, "pretrain.corpus.n_buildings", "must be positive".to_string());
    check(cfg.pretrain.stride >= 1, "pretrain.stride", "must be positive".to_string());
    check(cfg.pretrain.batch_size >= 1, "pretrain.batch_size", "must be positive".to_string());

    let sg = &cfg.surrogate;
    check(sg.ensemble_size >= 1, "surrogate.ensemble_size", "must be positive".to_string());
    check(!sg.hidden.is_empty() && sg.hidden.iter().all(|&w| w > 0), "surrogate.hidden", "needs positive widths".to_string());
    check(
        sg.noise_levels.iter().all(|s| *s > 0.0 && s.is_finite()),
        "surrogate.noise_levels",
        "must be positive".to_string(),
    );
    check(sg.batch_size >= 1, "surrogate.batch_size", "must be positive".to_string());

    let ft = &cfg.finetune;
    check(ft.batch_size >= 1, "finetune.batch_size", "must be positive".to_string());
    check(ft.lr > 0.0, "finetune.lr", "must be positive".to_string());
    check(ft.weight_decay >= 0.0, "finetune.weight_decay", "must be non-negative".to_string());

    check(!cfg.experiment.seeds.is_empty(), "experiment.seeds", "needs at least one seed".to_string());
    out
}
