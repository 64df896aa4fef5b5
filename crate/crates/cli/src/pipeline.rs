//! Stages of an experiment run and the files they exchange under the output
//! directory.
//!
//! ```text
//! data/dataset.csv          canonical prosumption (ingest, synth)
//! models/base.ckpt          pretrained forecaster
//! models/surrogate.ckpt     surrogate ensemble with scalers
//! models/adapters/*.ckpt    one adapter set per fine-tune job
//! models/consumption.json   buildings consumed by global training stages
//! outcomes/*.csv            per-day evaluation outcomes
//! runs.csv                  fine-tune job ledger
//! report.csv, report.md, scatter.svg
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use feeder_autodiff::{Adapters, Checkpoint};
use feeder_core::config::{validate_config, ExperimentConfig, FineTuneMode, LossKind, PeftMethod};
use feeder_core::dispatch::write_trace_csv;
use feeder_core::ingest::{generate_synthetic_with, load_dataset, split, write_canonical, BuildingSplit, PartitionedDataset, Range};
use feeder_core::types::BuildingSeries;
use feeder_learn::audit::ConsumptionLog;
use feeder_learn::data::pooled_samples;
use feeder_learn::evaluate::{
    estimate_soe, evaluate_building, method_forecasts, simulate_sequence, DayOutcome, Method,
};
use feeder_learn::finetune::{finetune, FineTuneData, FineTuneJob, FineTuneReport};
use feeder_learn::pretrain::{pretrain, pretrain_corpus, PretrainReport};
use feeder_learn::surrogate_train::{build_surrogate_dataset, train_surrogate, SurrogateReport};
use feeder_learn::{Forecaster, SurrogateEnsemble};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::report::{Report, ReportRow};
use crate::svg::scatter;

pub const BENCHMARKS: [&str; 4] = ["P-FC", "N48", "N168", "ZS"];

/// Report name of a fine-tune cell, e.g. `DFF-global-lora` or `PFF-MSE-local-dora`.
pub fn cell_name(mode: FineTuneMode, loss: LossKind, peft: PeftMethod) -> String {
    let kind = match loss {
        LossKind::Surrogate => "DFF",
        LossKind::Mse => "PFF-MSE",
        LossKind::Mae => "PFF-MAE",
    };
    format!("{kind}-{mode}-{peft}")
}

fn outcome_file(name: &str, seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("{name}__s{s}.csv"),
        None => format!("{name}.csv"),
    }
}

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: FineTuneMode,
    pub loss: LossKind,
    pub peft: PeftMethod,
    pub building: Option<u32>,
    pub n_train: usize,
    pub initial_val_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub lr: Option<f64>,
    pub status: String,
}

/// Outcome of the audit stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditSummary {
    pub max_difference: f64,
    pub hygiene_violations: usize,
    pub consumption_digest: String,
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    /// Write a dispatch trace for every evaluated day.
    pub trace: bool,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>, trace: bool) -> Result<Self> {
        let violations = validate_config(&cfg);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            bail!("invalid configuration:\n  {}", list.join("\n  "));
        }
        Ok(Self {
            cfg,
            out: out.into(),
            trace,
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn ensure_dir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(p)
    }

    pub fn config_hash(&self) -> Result<String> {
        let text = self.cfg.to_toml()?;
        Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
    }

    /// Buildings from the configured file, or the synthetic corpus.
    pub fn load_series(&self) -> Result<Vec<BuildingSeries>> {
        match &self.cfg.data.path {
            Some(p) => load_dataset(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(generate_synthetic_with(&self.cfg.data.synthetic)?),
        }
    }

    pub fn dataset(&self) -> Result<PartitionedDataset> {
        let d = split(self.load_series()?, &self.cfg.split, &self.cfg.horizon)?;
        if d.eval.is_empty() {
            bail!("no evaluation buildings in the dataset");
        }
        Ok(d)
    }

    /// Writes the dataset in canonical layout to `data/dataset.csv`.
    pub fn write_dataset(&self) -> Result<PathBuf> {
        let series = self.load_series()?;
        let p = self.ensure_dir("data")?.join("dataset.csv");
        let f = fs::File::create(&p)?;
        write_canonical(&series, None, std::io::BufWriter::new(f))?;
        Ok(p)
    }

    fn read_consumption(&self) -> Result<ConsumptionLog> {
        let p = self.path("models/consumption.json");
        if !p.exists() {
            return Ok(ConsumptionLog::default());
        }
        Ok(serde_json::from_str(&fs::read_to_string(&p)?)?)
    }

    fn record_consumption(&self, log: ConsumptionLog) -> Result<()> {
        let mut all = self.read_consumption()?;
        all.merge(log);
        self.ensure_dir("models")?;
        fs::write(self.path("models/consumption.json"), serde_json::to_string_pretty(&all)?)?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        fs::write(self.path(rel), serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    pub fn pretrain(&self) -> Result<PretrainReport> {
        let cfg = &self.cfg.pretrain;
        let (train, val) = pretrain_corpus(cfg, &self.cfg.horizon)?;
        let mut model = Forecaster::new(&self.cfg.forecaster, &self.cfg.horizon, cfg.seed)?;
        let report = pretrain(&mut model, &train, &val, cfg)?;
        self.ensure_dir("models")?;
        model.to_checkpoint().save(&self.path("models/base.ckpt"))?;
        self.write_json("models/pretrain.json", &report)?;
        Ok(report)
    }

    pub fn load_base(&self) -> Result<Forecaster> {
        let p = self.path("models/base.ckpt");
        let ckpt = Checkpoint::load(&p).with_context(|| format!("loading {} (run `pretrain` first)", p.display()))?;
        Ok(Forecaster::from_checkpoint(ckpt)?)
    }

    pub fn surrogate(&self) -> Result<SurrogateReport> {
        let ds = self.dataset()?;
        let base = self.load_base()?;
        let c = &self.cfg;
        let ft: Vec<&BuildingSplit> = ds.finetune.iter().collect();
        let sv: Vec<&BuildingSplit> = ds.surrogate_val.iter().collect();
        if sv.is_empty() {
            bail!("no surrogate validation buildings in the dataset");
        }
        let make = |splits: &[&BuildingSplit], seed: u64| {
            build_surrogate_dataset(splits, Range::Train, &base, &c.surrogate.noise_levels, seed, &c.battery, &c.cost, &c.horizon)
        };
        let train = make(&ft, c.surrogate.seed)?;
        let val = make(&sv, c.surrogate.seed.wrapping_add(1))?;
        let mut log = ConsumptionLog::default();
        log.record("surrogate", train.iter().chain(&val).map(|s| s.building));
        let (ens, report) = train_surrogate(&train, &val, &c.surrogate, c.horizon.forecast_hours)?;
        self.ensure_dir("models")?;
        ens.to_checkpoint().save(&self.path("models/surrogate.ckpt"))?;
        self.write_json("models/surrogate.json", &report)?;
        self.record_consumption(log)?;
        Ok(report)
    }

    pub fn load_surrogate(&self) -> Result<SurrogateEnsemble> {
        let p = self.path("models/surrogate.ckpt");
        let ckpt = Checkpoint::load(&p).with_context(|| format!("loading {} (run `surrogate` first)", p.display()))?;
        Ok(SurrogateEnsemble::from_checkpoint(ckpt)?)
    }

    /// Every job of the configured grid, plus the prediction-focused jobs
    /// that decision-focused jobs need for state-of-energy estimation.
    pub fn jobs(&self, ds: &PartitionedDataset) -> Vec<FineTuneJob> {
        let g = &self.cfg.experiment;
        let mut losses = g.losses.clone();
        if losses.contains(&LossKind::Surrogate) {
            losses.extend([LossKind::Mse, LossKind::Mae]);
        }
        losses.sort();
        losses.dedup();
        let mut out = Vec::new();
        for &mode in &g.modes {
            let scopes: Vec<Option<u32>> = match mode {
                FineTuneMode::Global => vec![None],
                FineTuneMode::Local => ds.eval.iter().map(|s| Some(s.building_id())).collect(),
            };
            for &peft in &g.pefts {
                for &seed in &g.seeds {
                    for &loss in &losses {
                        for &building in &scopes {
                            out.push(FineTuneJob {
                                mode,
                                loss,
                                peft,
                                seed,
                                building,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    fn scope<'a>(&self, ds: &'a PartitionedDataset, job: &FineTuneJob) -> Result<Vec<&'a BuildingSplit>> {
        match job.building {
            None => Ok(ds.finetune.iter().collect()),
            Some(b) => Ok(vec![ds
                .eval
                .iter()
                .find(|s| s.building_id() == b)
                .ok_or_else(|| anyhow!("building {b} is not an evaluation building"))?]),
        }
    }

    fn adapter_path(&self, job: &FineTuneJob) -> PathBuf {
        self.path(&format!("models/adapters/{}.ckpt", job.id()))
    }

    pub fn load_adapters(&self, job: &FineTuneJob) -> Result<Adapters> {
        let p = self.adapter_path(job);
        let ckpt = Checkpoint::load(&p).with_context(|| format!("loading {} (run `finetune` first)", p.display()))?;
        Ok(ckpt.into_adapters()?)
    }

    fn job_data(
        &self,
        ds: &PartitionedDataset,
        base: &Forecaster,
        job: &FineTuneJob,
        helpers: Option<(&Adapters, &Adapters)>,
    ) -> Result<FineTuneData> {
        let h = &self.cfg.horizon;
        let scope = self.scope(ds, job)?;
        let mut data = FineTuneData {
            train: pooled_samples(&scope, Range::Train, h)?,
            val: pooled_samples(&scope, Range::Val, h)?,
            train_soe: None,
            val_soe: None,
        };
        if let Some((mae, mse)) = helpers {
            let soe = |range: Range| -> Result<Vec<f64>> {
                let mut out = Vec::new();
                for s in &scope {
                    let days = s.days(range);
                    let sched = method_forecasts(&s.series, days, Method::Model { forecaster: base, adapters: Some(mae) }, h)?;
                    let state = method_forecasts(&s.series, days, Method::Model { forecaster: base, adapters: Some(mse) }, h)?;
                    out.extend(estimate_soe(&s.series, days, &sched, &state, &self.cfg.battery, &self.cfg.cost, h)?);
                }
                Ok(out)
            };
            data.train_soe = Some(soe(Range::Train)?);
            data.val_soe = Some(soe(Range::Val)?);
        }
        Ok(data)
    }

    fn run_job(
        &self,
        ds: &PartitionedDataset,
        base: &Forecaster,
        surrogate: Option<&SurrogateEnsemble>,
        job: &FineTuneJob,
    ) -> Result<FineTuneReport> {
        let helpers = if job.loss == LossKind::Surrogate {
            let aux = |loss| FineTuneJob { loss, ..*job };
            Some((self.load_adapters(&aux(LossKind::Mae))?, self.load_adapters(&aux(LossKind::Mse))?))
        } else {
            None
        };
        let data = self.job_data(ds, base, job, helpers.as_ref().map(|(a, b)| (a, b)))?;
        let (adapters, report) = finetune(base, job, &self.cfg.adapter, &self.cfg.finetune, &data, surrogate)?;
        let meta = serde_json::json!({ "job": job, "report": report });
        Checkpoint::from_adapters(&adapters, meta).save(&self.adapter_path(job))?;
        Ok(report)
    }

    /// Runs every job: prediction-focused first, then decision-focused.
    /// Failed jobs are recorded in `runs.csv` and returned as an error after
    /// the remaining jobs finish.
    pub fn finetune(&self) -> Result<Vec<JobRecord>> {
        let ds = self.dataset()?;
        let base = self.load_base()?;
        let jobs = self.jobs(&ds);
        let needs_surrogate = jobs.iter().any(|j| j.loss == LossKind::Surrogate);
        // Without a surrogate only the decision-focused jobs fail.
        let (surrogate, surrogate_error) = match needs_surrogate.then(|| self.load_surrogate()) {
            Some(Ok(s)) => (Some(s), None),
            Some(Err(e)) => (None, Some(format!("{e:#}"))),
            None => (None, None),
        };
        self.ensure_dir("models/adapters")?;
        let hash = self.config_hash()?;
        let (pff, dff): (Vec<FineTuneJob>, Vec<FineTuneJob>) =
            jobs.iter().partition(|j| j.loss != LossKind::Surrogate);
        let mut results: Vec<(FineTuneJob, Result<FineTuneReport>)> = Vec::new();
        for phase in [pff, dff] {
            let r: Vec<_> = phase
                .par_iter()
                .map(|j| {
                    log::info!("fine-tune {}", j.id());
                    let r = match (&surrogate_error, j.loss) {
                        (Some(e), LossKind::Surrogate) => Err(anyhow!("no surrogate: {e}")),
                        _ => self.run_job(&ds, &base, surrogate.as_ref(), j),
                    };
                    (*j, r)
                })
                .collect();
            results.extend(r);
        }
        let mut log = ConsumptionLog::default();
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (job, r) in results {
            let (report, status) = match r {
                Ok(rep) => (Some(rep), "ok".to_string()),
                Err(e) => {
                    failures.push(format!("{}: {e:#}", job.id()));
                    (None, format!("failed: {e}"))
                }
            };
            if job.mode == FineTuneMode::Global {
                let scope = self.scope(&ds, &job)?;
                log.record(&job.id(), scope.iter().map(|s| s.building_id()));
            }
            records.push(JobRecord {
                job_id: job.id(),
                config_hash: hash.clone(),
                seed: job.seed,
                mode: job.mode,
                loss: job.loss,
                peft: job.peft,
                building: job.building,
                n_train: report.as_ref().map_or(0, |r| r.n_train),
                initial_val_loss: report.as_ref().map(|r| r.initial_val_loss),
                final_val_loss: report.as_ref().map(|r| r.final_val_loss),
                lr: report.as_ref().map(|r| r.lr),
                status,
            });
        }
        let mut w = csv::Writer::from_path(self.path("runs.csv"))?;
        for r in &records {
            w.serialize(r)?;
        }
        w.flush()?;
        self.record_consumption(log)?;
        if !failures.is_empty() {
            bail!("{} fine-tune job(s) failed:\n  {}", failures.len(), failures.join("\n  "));
        }
        Ok(records)
    }

    fn evaluate_method<'m>(
        &self,
        ds: &PartitionedDataset,
        method_for: &(dyn Fn(u32) -> Result<Method<'m>> + Sync),
        trace_name: &str,
    ) -> Result<Vec<DayOutcome>> {
        let c = &self.cfg;
        let per: Vec<Result<Vec<DayOutcome>>> = ds
            .eval
            .par_iter()
            .map(|s| {
                let m = method_for(s.building_id())?;
                if self.trace {
                    self.write_traces(s, m, trace_name)?;
                }
                Ok(evaluate_building(s, Range::Test, m, &c.battery, &c.cost, &c.horizon)?)
            })
            .collect();
        let mut out = Vec::new();
        for p in per {
            out.extend(p?);
        }
        Ok(out)
    }

    fn write_traces(&self, split: &BuildingSplit, method: Method<'_>, name: &str) -> Result<()> {
        let c = &self.cfg;
        let days = split.days(Range::Test);
        let fc = method_forecasts(&split.series, days, method, &c.horizon)?;
        let sims = simulate_sequence(&split.series, days, &fc, &c.battery, &c.cost, &c.horizon)?;
        let dir = self.ensure_dir(&format!("outcomes/traces/{name}"))?;
        for (d, sim) in days.iter().zip(&sims) {
            let f = fs::File::create(dir.join(format!("b{}-d{d}.csv", split.building_id())))?;
            write_trace_csv(&sim.outcome, f)?;
        }
        Ok(())
    }

    fn write_outcomes(&self, file: &str, outcomes: &[DayOutcome]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.ensure_dir("outcomes")?.join(file))?;
        for o in outcomes {
            w.serialize(o)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Evaluates benchmarks and every configured cell on the test range.
    /// Cells whose adapters cannot be loaded are skipped and reported.
    pub fn evaluate(&self) -> Result<Vec<String>> {
        let ds = self.dataset()?;
        let base = self.load_base()?;
        let mut failures = Vec::new();
        for name in BENCHMARKS {
            let m = match name {
                "P-FC" => Method::Perfect,
                "N48" => Method::Naive48,
                "N168" => Method::Naive168,
                _ => Method::Model {
                    forecaster: &base,
                    adapters: None,
                },
            };
            let o = self.evaluate_method(&ds, &|_| Ok(m), name)?;
            self.write_outcomes(&outcome_file(name, None), &o)?;
        }
        let g = &self.cfg.experiment;
        for &mode in &g.modes {
            for &loss in &g.losses {
                for &peft in &g.pefts {
                    let name = cell_name(mode, loss, peft);
                    for &seed in &g.seeds {
                        let job = |building| FineTuneJob { mode, loss, peft, seed, building };
                        let loaded: Result<BTreeMap<u32, Adapters>> = ds
                            .eval
                            .iter()
                            .map(|s| {
                                let b = s.building_id();
                                let j = job((mode == FineTuneMode::Local).then_some(b));
                                Ok((b, self.load_adapters(&j)?))
                            })
                            .collect();
                        let adapters = match loaded {
                            Ok(a) => a,
                            Err(e) => {
                                failures.push(format!("{name} seed {seed}: {e:#}"));
                                continue;
                            }
                        };
                        let method = |b: u32| -> Result<Method<'_>> {
                            Ok(Method::Model {
                                forecaster: &base,
                                adapters: Some(adapters.get(&b).ok_or_else(|| anyhow!("no adapters for building {b}"))?),
                            })
                        };
                        let trace_name = format!("{name}__s{seed}");
                        match self.evaluate_method(&ds, &method, &trace_name) {
                            Ok(o) => self.write_outcomes(&outcome_file(&name, Some(seed)), &o)?,
                            Err(e) => failures.push(format!("{name} seed {seed}: {e:#}")),
                        }
                    }
                }
            }
        }
        Ok(failures)
    }

    fn read_outcomes(&self, file: &str) -> Result<Vec<DayOutcome>> {
        let p = self.path("outcomes").join(file);
        let mut r = csv::Reader::from_path(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(r.deserialize().collect::<std::result::Result<Vec<DayOutcome>, _>>()?)
    }

    /// Rebuilds the report from the per-day outcome files.
    pub fn build_report(&self) -> Report {
        let mut rows = Vec::new();
        for name in BENCHMARKS {
            rows.push(
                self.read_outcomes(&outcome_file(name, None))
                    .and_then(|o| ReportRow::benchmark(name, &o))
                    .unwrap_or_else(|e| ReportRow::failed(name, None, format!("failed: {e}"))),
            );
        }
        let g = &self.cfg.experiment;
        for &mode in &g.modes {
            for &loss in &g.losses {
                for &peft in &g.pefts {
                    let name = cell_name(mode, loss, peft);
                    let (m, l, p) = (mode.to_string(), loss.to_string(), peft.to_string());
                    let cell = [m.as_str(), l.as_str(), p.as_str()];
                    let runs: Result<Vec<Vec<DayOutcome>>> =
                        g.seeds.iter().map(|&s| self.read_outcomes(&outcome_file(&name, Some(s)))).collect();
                    rows.push(
                        runs.and_then(|r| ReportRow::over_runs(&name, cell, &r))
                            .unwrap_or_else(|e| ReportRow::failed(&name, Some(cell), format!("failed: {e}"))),
                    );
                }
            }
        }
        Report::new(rows)
    }

    /// Writes `report.csv`, `report.md` and `scatter.svg`.
    pub fn report(&self) -> Result<Report> {
        let report = self.build_report();
        fs::create_dir_all(&self.out)?;
        fs::write(self.path("report.csv"), report.to_csv()?)?;
        fs::write(self.path("report.md"), report.to_markdown(&self.cfg.name))?;
        fs::write(self.path("scatter.svg"), scatter(&report))?;
        Ok(report)
    }

    /// Every stage in order. Stage failures after pretraining still produce a
    /// partial report; the error is returned afterwards.
    pub fn run(&self) -> Result<Report> {
        self.write_dataset()?;
        let pre = self.pretrain()?;
        log::info!(
            "pretrain: val mse {:.4} -> {:.4}",
            pre.initial_val_mse,
            pre.final_val_mse
        );
        let mut errors = Vec::new();
        let needs_surrogate = self.cfg.experiment.losses.contains(&LossKind::Surrogate);
        if needs_surrogate {
            match self.surrogate() {
                Ok(r) => log::info!("surrogate: validation spearman {:?}", r.val_spearman),
                Err(e) => errors.push(format!("surrogate: {e:#}")),
            }
        }
        if let Err(e) = self.finetune() {
            errors.push(format!("finetune: {e:#}"));
        }
        errors.extend(self.evaluate()?);
        let report = self.report()?;
        if !errors.is_empty() {
            bail!("pipeline finished with failures:\n  {}", errors.join("\n  "));
        }
        Ok(report)
    }

    /// Recomputes the report from outcome files and diffs it against
    /// `report.csv`; also checks that no global stage consumed an
    /// evaluation building.
    pub fn audit(&self) -> Result<AuditSummary> {
        let written = Report::read_csv(&self.path("report.csv"))?;
        let rebuilt = self.build_report();
        let max_difference = rebuilt.max_difference(&written).map_err(|e| anyhow!("report mismatch: {e}"))?;
        let log = self.read_consumption()?;
        let violations = log.violations(&self.cfg.split.eval_buildings);
        for v in &violations {
            log::error!("stage {} consumed evaluation building {}", v.stage, v.building);
        }
        Ok(AuditSummary {
            max_difference,
            hygiene_violations: violations.len(),
            consumption_digest: log.digest(),
        })
    }

    /// Writes the dispatch trace of one test day for a benchmark or a
    /// fine-tune job id, simulating the building's test range up to that day.
    pub fn trace_day(&self, building: u32, day: usize, method: &str) -> Result<PathBuf> {
        let ds = self.dataset()?;
        let split = ds
            .eval
            .iter()
            .find(|s| s.building_id() == building)
            .ok_or_else(|| anyhow!("building {building} is not an evaluation building"))?;
        let days: Vec<usize> = split.days(Range::Test).iter().copied().take_while(|&d| d <= day).collect();
        if days.last() != Some(&day) {
            bail!("day {day} is not a test day of building {building}");
        }
        let base;
        let adapters;
        let m = match method {
            "P-FC" => Method::Perfect,
            "N48" => Method::Naive48,
            "N168" => Method::Naive168,
            "ZS" => {
                base = self.load_base()?;
                Method::Model {
                    forecaster: &base,
                    adapters: None,
                }
            }
            job_id => {
                base = self.load_base()?;
                let p = self.path(&format!("models/adapters/{job_id}.ckpt"));
                adapters = Checkpoint::load(&p)
                    .with_context(|| format!("unknown method `{job_id}`: no {}", p.display()))?
                    .into_adapters()?;
                Method::Model {
                    forecaster: &base,
                    adapters: Some(&adapters),
                }
            }
        };
        let c = &self.cfg;
        let fc = method_forecasts(&split.series, &days, m, &c.horizon)?;
        let sims = simulate_sequence(&split.series, &days, &fc, &c.battery, &c.cost, &c.horizon)?;
        let dir = self.ensure_dir("traces")?;
        let p = dir.join(format!("{method}-b{building}-d{day}.csv"));
        write_trace_csv(&sims.last().expect("at least one day").outcome, fs::File::create(&p)?)?;
        Ok(p)
    }
}

/// Loads a config file, or the defaults when `path` is `None`.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}
