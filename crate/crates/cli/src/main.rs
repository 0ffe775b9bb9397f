//! `macsim`: run MAC protocol experiments from TOML configs and analyze the
//! resulting CSVs.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use macsim_core::harness::{
    check_ordering, emit_plot_data, run_experiment, sweep_interarrival, sweep_ta, write_metrics_csv,
    write_plot_csv, write_ta_csv, ExperimentConfig, Table,
};

#[derive(Parser)]
#[command(name = "macsim", version, about = "Duty-cycled sensor network MAC simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    Interarrival,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config for each of its seeds and print the metrics rows.
    Run {
        config: PathBuf,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the CSV here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Sweep traffic load; several configs append into one CSV in the order
    /// given.
    Sweep {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "interarrival")]
        param: SweepParam,
        /// Values in seconds.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Use seeds 1..=N instead of each config's seed list.
        #[arg(long)]
        seeds: Option<u64>,
        /// Defaults to the first config's `sim.output`, then stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Sweep the adaptive timeout of a tmac config.
    SweepTa {
        config: PathBuf,
        /// Timeout values in milliseconds.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check per-protocol median energy against an expected order, lowest
    /// first. Exit code 0 on PASS, 1 on FAIL.
    CheckOrdering {
        csv: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        expect: Vec<String>,
    },
    /// Summarize a CSV as (group, x, median, min, max) rows for plotting.
    PlotData {
        csv: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        group: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn read_table(path: &Path) -> Result<Table> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Table::read(f).with_context(|| format!("reading {}", path.display()))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn seed_list(cfg: &ExperimentConfig, count: Option<u64>) -> Result<Vec<u64>> {
    match count {
        Some(0) => bail!("--seeds must be at least 1"),
        Some(n) => Ok((1..=n).collect()),
        None => Ok(cfg.sim.seeds.clone()),
    }
}

/// Ok(true) means every check passed.
fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { config, seed, output } => {
            let cfg = load(&config)?;
            let seeds = seed.map_or_else(|| cfg.sim.seeds.clone(), |s| vec![s]);
            let rows = seeds
                .iter()
                .map(|&s| run_experiment(&cfg, s))
                .collect::<Result<Vec<_>, _>>()?;
            write_metrics_csv(&rows, sink(output.as_deref())?)?;
        }
        Command::Sweep { configs, param: SweepParam::Interarrival, values, seeds, output } => {
            let mut rows = Vec::new();
            let mut default_out = None;
            for path in &configs {
                let cfg = load(path)?;
                default_out = default_out.or_else(|| cfg.sim.output.clone().map(PathBuf::from));
                let seeds = seed_list(&cfg, seeds)?;
                info!(
                    "{}: {} runs of {}",
                    path.display(),
                    values.len() * seeds.len(),
                    cfg.kind()
                );
                rows.extend(sweep_interarrival(&cfg, &values, &seeds)?);
            }
            write_metrics_csv(&rows, sink(output.or(default_out).as_deref())?)?;
        }
        Command::SweepTa { config, values, seeds, output } => {
            let cfg = load(&config)?;
            let seeds = seed_list(&cfg, seeds)?;
            let rows = sweep_ta(&cfg, &values, &seeds)?;
            write_ta_csv(&rows, sink(output.as_deref())?)?;
        }
        Command::CheckOrdering { csv, expect } => {
            let table = read_table(&csv)?;
            let expect: Vec<&str> = expect.iter().map(|s| s.trim()).collect();
            let report = check_ordering(&table, &expect)?;
            report.write_to(io::stdout().lock())?;
            return Ok(report.pass());
        }
        Command::PlotData { csv, x, y, group, output } => {
            let table = read_table(&csv)?;
            let points = emit_plot_data(&table, &x, &y, &group)?;
            write_plot_csv(&points, &x, &y, &group, sink(output.as_deref())?)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("macsim: {e:#}");
            // Distinct from a FAIL verdict.
            ExitCode::from(2)
        }
    }
}
