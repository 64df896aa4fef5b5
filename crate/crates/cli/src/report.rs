//! Results table: one row per method, aggregated over seeds.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use feeder_core::valuation::mean_std;
use feeder_learn::evaluate::{summarize, DayOutcome};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub ft_mode: Option<String>,
    pub loss_func: Option<String>,
    pub peft_method: Option<String>,
    pub cost_mean: Option<f64>,
    pub cost_std: Option<f64>,
    pub mae_mean: Option<f64>,
    pub mae_std: Option<f64>,
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
    pub n_runs: usize,
    pub note: Option<String>,
}

impl ReportRow {
    /// Benchmarks are deterministic and report no spread.
    pub fn benchmark(name: &str, outcomes: &[DayOutcome]) -> Result<Self> {
        let s = summarize(outcomes)?;
        Ok(Self {
            name: name.to_string(),
            ft_mode: None,
            loss_func: None,
            peft_method: None,
            cost_mean: Some(s.cost),
            cost_std: None,
            mae_mean: Some(s.mae),
            mae_std: None,
            mse_mean: Some(s.mse),
            mse_std: None,
            n_runs: 1,
            note: None,
        })
    }

    /// Mean and sample standard deviation over runs, each run averaged over
    /// every evaluated (building, day).
    pub fn over_runs(name: &str, cell: [&str; 3], runs: &[Vec<DayOutcome>]) -> Result<Self> {
        let sums = runs.iter().map(|r| summarize(r)).collect::<Result<Vec<_>, _>>()?;
        let stat = |f: fn(&feeder_learn::evaluate::Summary) -> f64| {
            let v: Vec<f64> = sums.iter().map(f).collect();
            mean_std(&v).map_or((None, None), |(m, s)| (Some(m), s))
        };
        let (cost_mean, cost_std) = stat(|s| s.cost);
        let (mae_mean, mae_std) = stat(|s| s.mae);
        let (mse_mean, mse_std) = stat(|s| s.mse);
        Ok(Self {
            name: name.to_string(),
            ft_mode: Some(cell[0].to_string()),
            loss_func: Some(cell[1].to_string()),
            peft_method: Some(cell[2].to_string()),
            cost_mean,
            cost_std,
            mae_mean,
            mae_std,
            mse_mean,
            mse_std,
            n_runs: runs.len(),
            note: None,
        })
    }

    pub fn failed(name: &str, cell: Option<[&str; 3]>, note: String) -> Self {
        Self {
            name: name.to_string(),
            ft_mode: cell.map(|c| c[0].to_string()),
            loss_func: cell.map(|c| c[1].to_string()),
            peft_method: cell.map(|c| c[2].to_string()),
            cost_mean: None,
            cost_std: None,
            mae_mean: None,
            mae_std: None,
            mse_mean: None,
            mse_std: None,
            n_runs: 0,
            note: Some(note),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

const HEADER: [&str; 12] = [
    "name",
    "ft_mode",
    "loss_func",
    "peft_method",
    "cost_mean",
    "cost_std",
    "mae_mean",
    "mae_std",
    "mse_mean",
    "mse_std",
    "n_runs",
    "note",
];

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_num(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        Ok(Some(s.parse().with_context(|| format!("bad number `{s}`"))?))
    }
}

fn opt(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

impl Report {
    pub fn new(mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| {
            let key = |r: &ReportRow| r.cost_mean.unwrap_or(f64::INFINITY);
            key(a).total_cmp(&key(b)).then_with(|| a.name.cmp(&b.name))
        });
        Self { rows }
    }

    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| r.note.is_some())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                r.ft_mode.clone().unwrap_or_default(),
                r.loss_func.clone().unwrap_or_default(),
                r.peft_method.clone().unwrap_or_default(),
                num(r.cost_mean),
                num(r.cost_std),
                num(r.mae_mean),
                num(r.mae_std),
                num(r.mse_mean),
                num(r.mse_std),
                r.n_runs.to_string(),
                r.note.clone().unwrap_or_default(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let f = |i: usize| rec.get(i).unwrap_or("");
            rows.push(ReportRow {
                name: f(0).to_string(),
                ft_mode: opt(f(1)),
                loss_func: opt(f(2)),
                peft_method: opt(f(3)),
                cost_mean: parse_num(f(4))?,
                cost_std: parse_num(f(5))?,
                mae_mean: parse_num(f(6))?,
                mae_std: parse_num(f(7))?,
                mse_mean: parse_num(f(8))?,
                mse_std: parse_num(f(9))?,
                n_runs: f(10).parse().unwrap_or(0),
                note: opt(f(11)),
            });
        }
        Ok(Self { rows })
    }

    /// Markdown table with `mean ± std` cells.
    pub fn to_markdown(&self, title: &str) -> String {
        let cell = |m: Option<f64>, s: Option<f64>| match (m, s) {
            (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
            (Some(m), None) => format!("{m:.4}"),
            _ => "n/a".to_string(),
        };
        let mut out = String::new();
        writeln!(out, "# {title}\n").unwrap();
        writeln!(out, "Average daily total cost (€), MAE (kW) and MSE (kW²) on the evaluation buildings over the test range, sorted by cost.\n").unwrap();
        writeln!(out, "| Name | FT Mode | Loss | PEFT | Cost | MAE | MSE | Runs |").unwrap();
        writeln!(out, "|---|---|---|---|---:|---:|---:|---:|").unwrap();
        for r in &self.rows {
            let mut name = r.name.clone();
            if let Some(n) = &r.note {
                name.push_str(&format!(" ({n})"));
            }
            writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                name,
                r.ft_mode.as_deref().unwrap_or(""),
                r.loss_func.as_deref().unwrap_or(""),
                r.peft_method.as_deref().unwrap_or(""),
                cell(r.cost_mean, r.cost_std),
                cell(r.mae_mean, r.mae_std),
                cell(r.mse_mean, r.mse_std),
                r.n_runs
            )
            .unwrap();
        }
        out
    }

    /// Largest absolute difference between matching metrics of two reports,
    /// or a description of the first structural mismatch.
    pub fn max_difference(&self, other: &Report) -> std::result::Result<f64, String> {
        if self.rows.len() != other.rows.len() {
            return Err(format!("{} rows vs {}", self.rows.len(), other.rows.len()));
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.rows.iter().zip(&other.rows) {
            if (&a.name, &a.ft_mode, &a.loss_func, &a.peft_method, a.n_runs)
                != (&b.name, &b.ft_mode, &b.loss_func, &b.peft_method, b.n_runs)
            {
                return Err(format!("row `{}` differs from `{}`", a.name, b.name));
            }
            let pairs = [
                (a.cost_mean, b.cost_mean),
                (a.cost_std, b.cost_std),
                (a.mae_mean, b.mae_mean),
                (a.mae_std, b.mae_std),
                (a.mse_mean, b.mse_mean),
                (a.mse_std, b.mse_std),
            ];
            for (x, y) in pairs {
                match (x, y) {
                    (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
                    (None, None) => {}
                    _ => return Err(format!("row `{}` has a blank on one side only", a.name)),
                }
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, cost: Option<f64>) -> ReportRow {
        let mut r = ReportRow::failed(name, None, String::new());
        r.cost_mean = cost;
        r.note = None;
        r
    }

    #[test]
    fn sorted_by_cost_then_name() {
        let r = Report::new(vec![row("b", Some(1.0)), row("z", None), row("a", Some(1.0)), row("c", Some(0.5))]);
        let names: Vec<&str> = r.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["c", "a", "b", "z"]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut a = row("x", Some(0.1 + 0.2));
        a.cost_std = Some(1.0 / 3.0);
        a.ft_mode = Some("global".into());
        let r = Report::new(vec![a, row("y", Some(2.0))]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, r.to_csv().unwrap()).unwrap();
        let back = Report::read_csv(&p).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.max_difference(&r), Ok(0.0));
    }
}
