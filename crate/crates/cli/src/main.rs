mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use csma_aoi::experiments::{self, ExperimentError};
use csma_aoi::optimizer::{self, OptimizerInputs};
use csma_aoi::sim::{self, Mac, SimScenario};
use csma_aoi::{csma, CsmaError, OptimizeError, SimError};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use config::{Config, MacKind, Overrides, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("{0}")]
    Unconverged(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Output(_) => 1,
            CliError::Validation(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Unconverged(_) => 4,
        }
    }
}

impl From<CsmaError> for CliError {
    fn from(e: CsmaError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Optimize(o) => o.into(),
            ExperimentError::Unconverged { .. } => CliError::Unconverged(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "csma-aoi", version, about = "Age of Information in CSMA networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sweep points per axis.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Simulation horizon in ms.
    #[arg(long, global = true)]
    horizon_ms: Option<f64>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Closed-form per-link and total age.
    Age,
    /// Age-optimal back-off rates and contention windows.
    Optimize,
    /// Discrete-event simulation of the configured MAC.
    Simulate,
    /// Total age over a two-link back-off grid.
    Sweep,
    /// Slotted against idealized CSMA for growing networks.
    Density,
    /// Optimized CSMA against Round Robin.
    Compare,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Age => "age",
            Command::Optimize => "optimize",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Density => "density",
            Command::Compare => "compare",
        }
    }

    fn default_format(self) -> Format {
        match self {
            Command::Age | Command::Optimize | Command::Simulate => Format::Json,
            Command::Sweep | Command::Density | Command::Compare => Format::Csv,
        }
    }
}

/// A rendered result: a JSON document and a long-format table.
struct Report {
    json: serde_json::Value,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    /// Set when the result was written but the run should still fail.
    failure: Option<CliError>,
}

impl Report {
    fn new(json: serde_json::Value, header: Vec<&'static str>, rows: Vec<Vec<String>>) -> Self {
        Self {
            json,
            header,
            rows,
            failure: None,
        }
    }
}

fn envelope<T: Serialize>(command: Command, body: T) -> serde_json::Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": command.name(),
        "result": body,
    })
}

fn cmd_age(cfg: &Config) -> Result<Report, CliError> {
    let params = cfg.params("age")?;
    let ages = csma::total_age(&params)?;
    let mut rows: Vec<Vec<String>> = ages
        .per_link
        .iter()
        .enumerate()
        .map(|(k, a)| vec![(k + 1).to_string(), a.to_string()])
        .collect();
    rows.push(vec!["total".into(), ages.total.to_string()]);
    Ok(Report::new(envelope(Command::Age, &ages), vec!["link", "age_ms"], rows))
}

fn cmd_optimize(cfg: &Config) -> Result<Report, CliError> {
    let r_ub = cfg.r_ub()?;
    let inputs = OptimizerInputs::new(cfg.network.holding_rates.clone(), r_ub)?;
    let a = optimizer::optimize_backoff(&inputs, cfg.t_slot, &cfg.network.arrival_rates)?;
    let rows = (0..a.backoff_rates.len())
        .map(|k| {
            vec![
                (k + 1).to_string(),
                cfg.network.holding_rates[k].to_string(),
                a.backoff_rates[k].to_string(),
                a.contention_windows[k].to_string(),
                a.rounded_windows[k].to_string(),
            ]
        })
        .collect();
    let body = json!({
        "r_ub": r_ub,
        "t_slot": cfg.t_slot,
        "assignment": a,
    });
    Ok(Report::new(
        envelope(Command::Optimize, body),
        vec!["link", "holding_rate", "backoff_rate", "contention_window", "rounded_window"],
        rows,
    ))
}

fn cmd_simulate(cfg: &Config) -> Result<Report, CliError> {
    let s = &cfg.simulation;
    let n = cfg.network.holding_rates.len();
    let (params, mac) = match s.mac {
        MacKind::Idealized => (cfg.params("idealized simulation")?, Mac::Idealized),
        MacKind::Slotted => {
            let windows = match &s.windows {
                Some(w) => w.clone(),
                None => cfg
                    .params("slotted simulation without windows")?
                    .links
                    .iter()
                    .map(|l| {
                        optimizer::contention_window(l.backoff_rate, cfg.t_slot)
                            .map(|w| optimizer::round_window(w, 2))
                    })
                    .collect::<Result<_, _>>()?,
            };
            (
                cfg.params_without_backoff()?,
                Mac::Slotted {
                    t_slot: cfg.t_slot,
                    windows,
                },
            )
        }
        MacKind::RoundRobin => (
            cfg.params_without_backoff()?,
            Mac::RoundRobin {
                order: s.order.clone().unwrap_or_else(|| (0..n).collect()),
            },
        ),
    };
    let mut scenario = SimScenario::new(params, mac, s.horizon_ms, s.seed);
    if let Some(w) = s.warmup_ms {
        scenario.warmup = w;
    }
    let r = sim::simulate(&scenario)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (k, (age, d)) in r.per_link_age.iter().zip(&r.deliveries).enumerate() {
        let link = (k + 1).to_string();
        rows.push(vec!["age_ms".into(), link.clone(), age.to_string()]);
        rows.push(vec!["deliveries".into(), link, d.to_string()]);
    }
    for (metric, value) in [
        ("total_age_ms", r.total_age.to_string()),
        ("busy_fraction", r.busy_fraction.to_string()),
        ("collisions", r.collisions.to_string()),
        ("successes", r.successes.to_string()),
    ] {
        rows.push(vec![metric.into(), "all".into(), value]);
    }
    let failure = (!r.converged).then(|| {
        let starved: Vec<String> = r
            .deliveries
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(k, _)| (k + 1).to_string())
            .collect();
        CliError::Unconverged(format!(
            "simulation unconverged: no deliveries on link(s) {}",
            starved.join(", ")
        ))
    });
    let body = json!({ "scenario": scenario, "outcome": r });
    Ok(Report {
        failure,
        ..Report::new(envelope(Command::Simulate, body), vec!["metric", "link", "value"], rows)
    })
}

fn cmd_sweep(cfg: &Config) -> Result<Report, CliError> {
    let r_ub = cfg.r_ub()?;
    let s = experiments::sweep(
        &cfg.network.arrival_rates,
        &cfg.network.holding_rates,
        r_ub,
        cfg.sweep.grid,
        cfg.sweep.spacing,
    )?;
    let rows = s
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                r.r1.to_string(),
                r.r2.to_string(),
                r.total_age.to_string(),
                u8::from(i == s.min_index).to_string(),
            ]
        })
        .collect();
    let body = json!({ "r_ub": r_ub, "spacing": cfg.sweep.spacing, "minimum": s.minimum(), "grid": s });
    Ok(Report::new(
        envelope(Command::Sweep, body),
        vec!["r1", "r2", "total_age_ms", "is_min"],
        rows,
    ))
}

fn cmd_density(cfg: &Config) -> Result<Report, CliError> {
    let dc = cfg.density_config()?;
    let result = experiments::density(&dc)?;
    let rows = result
        .iter()
        .map(|r| {
            vec![
                r.nodes.to_string(),
                r.ideal_age.to_string(),
                r.slotted_age.to_string(),
                r.gap_percent.to_string(),
                r.best_w0.to_string(),
            ]
        })
        .collect();
    let body = json!({ "config": dc, "rows": result });
    Ok(Report::new(
        envelope(Command::Density, body),
        vec!["nodes", "ideal_age_ms", "slotted_age_ms", "gap_percent", "best_w0"],
        rows,
    ))
}

fn cmd_compare(cfg: &Config) -> Result<Report, CliError> {
    let r_ub = cfg.r_ub()?;
    let result = experiments::compare(
        &cfg.network.arrival_rates,
        &cfg.network.holding_rates,
        r_ub,
        cfg.t_slot,
        cfg.simulation.horizon_ms,
        cfg.simulation.seed,
    )?;
    let rows = result
        .iter()
        .map(|r| vec![r.scheme.clone(), r.total_age.to_string(), r.note.clone()])
        .collect();
    let body = json!({ "r_ub": r_ub, "rows": result });
    Ok(Report::new(
        envelope(Command::Compare, body),
        vec!["scheme", "total_age_ms", "note"],
        rows,
    ))
}

fn write_report(report: &Report, command: Command, format: Format, out: &mut dyn Write) -> Result<(), CliError> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, &report.json)
                .map_err(|e| CliError::Output(e.to_string()))?;
            writeln!(out)?;
        }
        Format::Csv => {
            writeln!(out, "# csma-aoi/{SCHEMA_VERSION} {}", command.name())?;
            let mut w = csv::Writer::from_writer(&mut *out);
            w.write_record(&report.header)?;
            for row in &report.rows {
                w.write_record(row)?;
            }
            w.flush()?;
        }
    }
    out.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config <path> is required".into()))?;
    let overrides = Overrides {
        seed: cli.seed,
        grid: cli.grid,
        horizon_ms: cli.horizon_ms,
    };
    let cfg = Config::load(path, &overrides)?;
    let report = match cli.command {
        Command::Age => cmd_age(&cfg),
        Command::Optimize => cmd_optimize(&cfg),
        Command::Simulate => cmd_simulate(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Density => cmd_density(&cfg),
        Command::Compare => cmd_compare(&cfg),
    }?;
    let format = cli.format.unwrap_or(cli.command.default_format());
    match &cli.out {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p)?);
            write_report(&report, cli.command, format, &mut f)?;
        }
        None => write_report(&report, cli.command, format, &mut io::stdout().lock())?,
    }
    match report.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
