//! Command-line front end for the `lln-balance` simulator.
//!
//! Exit codes: 0 when every run succeeded, 1 when some run failed, 2 for a
//! configuration error detected before anything ran.

pub mod batch;
pub mod converge;
pub mod plot;
pub mod scenario;
pub mod table;

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use lln_balance::protocol::Variant;
use lln_balance::simcore::run_scenario;

use crate::converge::ConvergeParams;
use crate::table::{fmt_f64, fmt_opt, results_table, RunRecord, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_PARTIAL,
        }
    }
}

impl From<scenario::ScenarioError> for CliError {
    fn from(e: scenario::ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "lln-balance", version, about = "Load-balanced RPL parent selection simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario file.
    Run(RunArgs),
    /// Run every scenario, variant and seed of a TOML manifest.
    Batch(BatchArgs),
    /// Turn a results CSV into long-format plot data for one metric.
    Plotdata(PlotArgs),
    /// Fixed-step automaton against a stationary environment.
    Converge(ConvergeArgs),
    /// Print the default scenario with every key.
    Defaults,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file of `key: value` lines.
    pub scenario: PathBuf,
    /// Master seed; overrides the scenario's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// lalarpl, minhop or random; overrides the scenario's `variant`.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Write the event log as newline-delimited JSON.
    #[arg(long)]
    pub export_log: bool,
    /// Write node positions and links as JSON.
    #[arg(long)]
    pub export_topology: bool,
    /// Override a scenario key, e.g. `--set lambda=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    pub manifest: PathBuf,
    /// Output directory; overrides the manifest's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub metric: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "results/results.csv")]
    pub results: PathBuf,
    #[arg(long)]
    pub group_by: Option<String>,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    pub beta: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.2")]
    pub reward_probs: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    /// Number of seeds.
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1)]
    pub first_seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub threshold: f64,
}

/// Parses `args` (program name first), executes, and returns the exit code.
/// Normal output goes to `out`, diagnostics to `err`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    match cmd {
        Command::Run(a) => cmd_run(a, out, err),
        Command::Batch(a) => cmd_batch(a, out, err),
        Command::Plotdata(a) => cmd_plot(a, out),
        Command::Converge(a) => cmd_converge(a, out),
        Command::Defaults => {
            let cfg = lln_balance::simcore::ScenarioConfig::default();
            write!(out, "{}", scenario::render(&cfg))?;
            Ok(EXIT_OK)
        }
    }
}

fn cmd_run(a: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let mut cfg = scenario::parse_scenario(&a.scenario)?;
    scenario::apply_overrides(&mut cfg, &a.sets)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(v) = a.variant {
        cfg.protocol.variant = v;
    }
    let name = a
        .scenario
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());

    let result = run_scenario(&cfg);
    fs::create_dir_all(&a.out)?;
    let record = RunRecord {
        scenario: name.clone(),
        variant: cfg.variant(),
        seed: cfg.seed,
        n_nodes: cfg.n_nodes,
        lambda: cfg.lambda,
        outcome: result.as_ref().map(|o| o.report.clone()).map_err(|e| e.to_string()),
    };
    fs::write(a.out.join("results.csv"), results_table(&[record]).to_csv_string())?;

    let output = match result {
        Ok(o) => o,
        Err(e) => {
            writeln!(err, "run failed: {e}")?;
            return Ok(EXIT_PARTIAL);
        }
    };
    if a.export_log {
        let f = fs::File::create(a.out.join("events.ndjson"))?;
        output.log.write_ndjson(std::io::BufWriter::new(f))?;
    }
    if a.export_topology {
        let json = serde_json::to_string_pretty(&output.topology)
            .map_err(|e| CliError::Data(e.to_string()))?;
        fs::write(a.out.join("topology.json"), json + "\n")?;
    }
    let r = &output.report;
    writeln!(out, "scenario {name} variant {} seed {}", cfg.variant(), cfg.seed)?;
    writeln!(
        out,
        "pdr {} ({} of {} delivered, {} dropped, {} in flight)",
        fmt_f64(r.pdr),
        r.packets_received,
        r.packets_sent,
        r.packets_dropped,
        r.packets_in_flight
    )?;
    writeln!(
        out,
        "throughput mean {} bit/s, jfi {}",
        fmt_f64(r.mean_throughput()),
        fmt_f64(r.jfi_throughput)
    )?;
    writeln!(out, "aeed {} s", fmt_opt(r.aeed))?;
    writeln!(
        out,
        "energy mean {} J, jfi {}, altn {}, deaths {}",
        fmt_f64(r.mean_energy()),
        fmt_f64(r.jfi_energy),
        fmt_f64(r.altn),
        r.death_times.len()
    )?;
    writeln!(out, "wrote {}", a.out.join("results.csv").display())?;
    Ok(EXIT_OK)
}

fn cmd_batch(a: BatchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let mut manifest = batch::parse_manifest(&a.manifest)?;
    if let Some(dir) = a.out {
        manifest.out = dir;
    }
    let summary = match a.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(|| batch::run_batch(&manifest))?,
        None => batch::run_batch(&manifest)?,
    };
    writeln!(
        out,
        "{} runs, {} failed; wrote {} and {}",
        summary.runs,
        summary.failures.len(),
        summary.results_path.display(),
        summary.aggregate_path.display()
    )?;
    for (name, variant, seed, e) in &summary.failures {
        writeln!(err, "failed: {name} {variant} seed {seed}: {e}")?;
    }
    Ok(if summary.failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn cmd_plot(a: PlotArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let file = fs::File::open(&a.results)
        .map_err(|e| CliError::Config(format!("{}: {e}", a.results.display())))?;
    let results = Table::read_csv(file)?;
    let plot = plot::emit_plot_data(&results, &a.metric, a.group_by.as_deref())?;
    fs::write(&a.out, plot.to_csv_string())?;
    writeln!(out, "{} rows of {} written to {}", plot.rows.len(), a.metric, a.out.display())?;
    Ok(EXIT_OK)
}

fn cmd_converge(a: ConvergeArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let params = ConvergeParams {
        alpha: a.alpha,
        beta: a.beta,
        reward_probs: a.reward_probs,
        iterations: a.iterations,
        first_seed: a.first_seed,
        seeds: a.seeds,
        threshold: a.threshold,
    };
    let summary = converge::converge(&params)?;
    write!(out, "{}", converge::render(&params, &summary))?;
    Ok(EXIT_OK)
}
