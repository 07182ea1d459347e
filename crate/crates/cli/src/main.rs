//! `ctsgan`: data preparation, staged training, scenario generation and
//! interval evaluation from the command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or model errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use ctsgan_core::ctsgan::{load_checkpoint, save_checkpoint, Stage};
use ctsgan_core::data::{apply_normalization, write_normalized_csv, CsvSchema, NormalizationParams};
use ctsgan_core::harness::{
    self, emit_report, evaluate_files, write_actuals_csv, write_plot_ecp, write_scenarios_csv,
    DataSource, ExperimentConfig, ReportDocument, StagedOutput,
};
use ctsgan_core::intervals::IntervalRule;
use ctsgan_core::nn::NoiseSpec;

#[derive(Parser)]
#[command(name = "ctsgan", version, about = "Scenario-based interval prediction with a conditional time-series GAN")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, clip and normalize the training split; dump it with its
    /// normalization parameters.
    Prep,
    /// Run the training stages and write a checkpoint.
    Train {
        /// Last stage to run (1, 2 or 3).
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
        until_stage: u8,
    },
    /// Generate test-horizon scenarios from a checkpoint.
    Generate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Build intervals from scenario files and score them against actuals.
    Evaluate {
        /// One scenario file per repeated prediction process.
        #[arg(long = "scenarios", value_name = "PATH", required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long, value_name = "PATH")]
        actuals: PathBuf,
    },
    /// Full pipeline: train, repeat predictions, score, emit all reports.
    Experiment,
    /// Re-render a stored report after recomputing it from its runs.
    Report {
        /// Stored report (defaults to `<out>/report.json`).
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Data(ctsgan_core::Error),
}

impl From<ctsgan_core::Error> for Failure {
    fn from(e: ctsgan_core::Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = Result<(), Failure>;

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("this command needs --config <PATH>".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn json_bytes(value: &NormalizationParams, buf: &mut Vec<u8>) -> ctsgan_core::Result<()> {
    buf.extend_from_slice(serde_json::to_string_pretty(value).map_err(ctsgan_core::Error::from)?.as_bytes());
    Ok(())
}

fn report_line(doc: &ReportDocument) -> String {
    let m = &doc.metrics;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    format!(
        "S={} T={} mean ECPAS={:.4} mean EAWAPI={:.4}",
        m.meta.num_runs,
        m.meta.num_samples,
        mean(&m.delta_per_run),
        mean(&m.xi_per_run)
    )
}

fn prep(cli: &Cli) -> Outcome {
    let cfg = load_config(cli)?;
    let data = harness::prepare(&cfg)?;
    let normalized = apply_normalization(&data.train, &data.norm)?;
    let schema = match &cfg.data {
        DataSource::Csv { schema, .. } => schema.clone(),
        DataSource::Synthetic(_) => CsvSchema {
            exogenous: data.train.exogenous().iter().map(|c| c.name.clone()).collect(),
            ..CsvSchema::new("value")
        },
    };
    let mut out = StagedOutput::new(out_dir(cli, Some(&cfg)))?;
    out.write("normalized.csv", |b| write_normalized_csv(b, &normalized, &schema))?;
    out.write("normalization.json", |b| json_bytes(&data.norm, b))?;
    for path in out.commit()? {
        println!("{}", path.display());
    }
    eprintln!(
        "{} training points, {} training windows, {} test windows",
        data.train.len(),
        data.train_set.len(),
        data.test_set.len()
    );
    Ok(())
}

fn train(cli: &Cli, until_stage: u8) -> Outcome {
    let cfg = load_config(cli)?;
    let until = Stage::try_from(until_stage)?;
    let started = Instant::now();
    let data = harness::prepare(&cfg)?;
    let model = harness::train_model(&cfg, &data, until)?;
    let dir = out_dir(cli, Some(&cfg));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Data(io_error(&dir, e)))?;
    let path = dir.join("checkpoint.json");
    save_checkpoint(&model, &path)?;
    println!("{}", path.display());
    eprintln!("trained to stage {} in {:.1?}", model.stage() as u8, started.elapsed());
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> ctsgan_core::Error {
    ctsgan_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn generate(cli: &Cli, checkpoint: &Path) -> Outcome {
    let cfg = load_config(cli)?;
    let model = load_checkpoint(checkpoint)?;
    let data = harness::prepare(&cfg)?;
    let set = if cfg.sigma_list.is_empty() {
        let noise = NoiseSpec {
            mu: cfg.mu,
            sigma: 1.0,
        };
        harness::generate_horizon(&model, &data, cfg.scenarios, &noise, cfg.units, cfg.seed)?
    } else {
        harness::pd_generate_horizon(&model, &data, cfg.scenarios, &cfg.sigma_list, cfg.mu, cfg.units, cfg.seed)?
    };
    let mut out = StagedOutput::new(out_dir(cli, Some(&cfg)))?;
    out.write("scenarios.csv", |b| write_scenarios_csv(b, &set))?;
    out.write("actuals.csv", |b| write_actuals_csv(b, &data.actuals))?;
    for path in out.commit()? {
        println!("{}", path.display());
    }
    Ok(())
}

fn evaluate(cli: &Cli, scenarios: &[PathBuf], actuals: &Path) -> Outcome {
    let cfg = match &cli.config {
        Some(_) => Some(load_config(cli)?),
        None => None,
    };
    let rule = cfg.as_ref().map(|c| c.interval_rule).unwrap_or(IntervalRule::Envelope);
    let doc = evaluate_files(
        scenarios,
        actuals,
        rule,
        cfg.as_ref().and_then(|c| c.delta_grid.as_deref()),
        cfg.as_ref().and_then(|c| c.xi_grid.as_deref()),
    )?;
    write_report(cli, cfg.as_ref(), &doc)
}

fn write_report(cli: &Cli, cfg: Option<&ExperimentConfig>, doc: &ReportDocument) -> Outcome {
    let mut out = StagedOutput::new(out_dir(cli, cfg))?;
    out.write("report.json", |b| {
        b.extend_from_slice(doc.to_json()?.as_bytes());
        Ok(())
    })?;
    out.write("plot_ecp.csv", |b| write_plot_ecp(b, &doc.metrics))?;
    for path in out.commit()? {
        println!("{}", path.display());
    }
    eprintln!("{}", report_line(doc));
    Ok(())
}

fn experiment(cli: &Cli) -> Outcome {
    let cfg = load_config(cli)?;
    let result = harness::run_experiment(&cfg)?;
    for path in emit_report(&result, out_dir(cli, Some(&cfg)))? {
        println!("{}", path.display());
    }
    eprintln!("{} in {:.1?}", report_line(&result.document), result.wall_time);
    if let Some(p) = &result.document.patterns {
        let held = p.runs.iter().filter(|r| r.union_coverage >= r.base_coverage).count();
        eprintln!("union coverage >= base-pattern coverage in {held}/{} runs", p.runs.len());
    }
    Ok(())
}

fn report(cli: &Cli, stored: Option<&Path>) -> Outcome {
    let default = out_dir(cli, None).join("report.json");
    let path = stored.unwrap_or(&default);
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(io_error(path, e)))?;
    let doc = ReportDocument::from_json(&text)?;
    doc.verify()?;
    write_report(cli, None, &doc)
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Prep => prep(cli),
        Command::Train { until_stage } => train(cli, *until_stage),
        Command::Generate { checkpoint } => generate(cli, checkpoint),
        Command::Evaluate { scenarios, actuals } => evaluate(cli, scenarios, actuals),
        Command::Experiment => experiment(cli),
        Command::Report { report: stored } => report(cli, stored.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
