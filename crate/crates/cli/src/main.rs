use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use feeder_cli::pipeline::load_config;
use feeder_cli::Pipeline;

#[derive(Parser)]
#[command(name = "feeder", version, about = "Forecast fine-tuning experiments for dispatchable feeders")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset file (canonical, long or Ausgrid wide layout).
    #[arg(long, global = true, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Use a synthetic corpus of N_BUILDINGS buildings over N_DAYS days.
    #[arg(long, global = true, num_args = 2, value_names = ["N_BUILDINGS", "N_DAYS"])]
    synthetic: Option<Vec<usize>>,
    /// Comma-separated fine-tune seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads for per-building and per-job parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Write a dispatch trace CSV for every evaluated day.
    #[arg(long, global = true)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the dataset and write it in canonical layout.
    Ingest,
    /// Generate the synthetic corpus and write it in canonical layout.
    Synth,
    /// Train the base forecaster.
    Pretrain,
    /// Build the surrogate dataset and train the ensemble.
    Surrogate,
    /// Run every fine-tune job of the experiment grid.
    Finetune,
    /// Evaluate benchmarks and fine-tuned models on the test range.
    Evaluate,
    /// Build report.csv, report.md and scatter.svg from outcome files.
    Report,
    /// Write the dispatch trace of one test day.
    TraceDay {
        #[arg(long)]
        building: u32,
        /// Day index counted from the first day of the series.
        #[arg(long)]
        day: usize,
        /// P-FC, N48, N168, ZS or a fine-tune job id.
        #[arg(long, default_value = "ZS")]
        method: String,
    },
    /// Run every stage in order.
    Run,
    /// Recompute the report from outcome files and check data hygiene.
    Audit,
}

fn pipeline(c: &Common) -> Result<Pipeline> {
    let mut cfg = load_config(c.config.as_deref())?;
    if let Some(p) = &c.data {
        cfg.data.path = Some(p.clone());
    }
    if let Some(v) = &c.synthetic {
        cfg.data.path = None;
        cfg.data.synthetic.n_buildings = v[0];
        cfg.data.synthetic.n_days = v[1];
    }
    if let Some(s) = &c.seeds {
        cfg.experiment.seeds = s.clone();
    }
    Pipeline::new(cfg, &c.out, c.trace)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let p = pipeline(&cli.common)?;
    match cli.command {
        Command::Ingest => {
            if p.cfg.data.path.is_none() {
                bail!("ingest needs --data or data.path in the config");
            }
            let out = p.write_dataset()?;
            let ds = p.dataset()?;
            println!(
                "{} finetune, {} surrogate-validation, {} evaluation buildings ({} omitted) -> {}",
                ds.finetune.len(),
                ds.surrogate_val.len(),
                ds.eval.len(),
                ds.omitted.len(),
                out.display()
            );
        }
        Command::Synth => {
            let out = p.write_dataset()?;
            println!("wrote {}", out.display());
        }
        Command::Pretrain => {
            let r = p.pretrain()?;
            println!(
                "validation mse {:.4} -> {:.4} ({:.1}% better)",
                r.initial_val_mse,
                r.final_val_mse,
                100.0 * r.improvement()
            );
        }
        Command::Surrogate => {
            let r = p.surrogate()?;
            println!("validation spearman {:?}, epochs {:?}", r.val_spearman, r.epochs);
        }
        Command::Finetune => {
            let jobs = p.finetune()?;
            println!("{} jobs finished", jobs.len());
        }
        Command::Evaluate => {
            let failures = p.evaluate()?;
            if !failures.is_empty() {
                bail!("evaluation incomplete:\n  {}", failures.join("\n  "));
            }
        }
        Command::Report => {
            let r = p.report()?;
            print!("{}", r.to_markdown(&p.cfg.name));
            if r.has_failures() {
                bail!("report has failed rows");
            }
        }
        Command::TraceDay { building, day, method } => {
            println!("wrote {}", p.trace_day(building, day, &method)?.display());
        }
        Command::Run => {
            let r = p.run();
            if let Ok(report) = &r {
                print!("{}", report.to_markdown(&p.cfg.name));
            }
            r?;
        }
        Command::Audit => {
            let a = p.audit()?;
            println!(
                "max difference {:e}, hygiene violations {}, consumption digest {}",
                a.max_difference, a.hygiene_violations, a.consumption_digest
            );
            if a.max_difference > 1e-9 || a.hygiene_violations > 0 {
                bail!("audit failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
