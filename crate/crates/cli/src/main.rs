//! `ffcs`: batch driver for zoning, calibration, simulation, tuning and the
//! benchmark tables.

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A solver ran out of nodes while `mip.strict_budget` was set.
#[derive(Debug)]
pub struct BudgetExceeded(pub u64);

impl std::fmt::Display for BudgetExceeded {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "solver budget exhausted in {} programs", self.0)
    }
}

impl std::error::Error for BudgetExceeded {}

#[derive(Debug, Parser)]
#[command(name = "ffcs", version, about = "Staff-based vehicle relocation for free-floating car sharing")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    scenarios: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Write a synthetic city (cell-level CSV files and its spec).
    GenData,
    /// Cluster grid cells into zones and write the zone-level data set.
    Zone,
    /// Score a zoning by how predictable its parked-vehicle series are.
    ValidateZones,
    /// Calibrate demand intensities and compare activity scaling factors.
    Calibrate,
    /// Run the configured policy and the do-nothing baseline on shared scenarios.
    Simulate,
    /// Search relocation parameters.
    Tune,
    /// Trip time against staff size.
    BenchStaff,
    /// Relocation gains under different zonings of the same cells.
    BenchZoning,
    /// Relocation results with different vehicle-availability predictors.
    BenchPredictors,
    /// Baseline, ranking policy and local programs side by side.
    BenchMip,
    /// Policy decision time against zone count.
    BenchScale,
    /// Export a full-information model and a per-slot program as LP files.
    ExportLp,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(n) = cli.scenarios {
        cfg.scenarios = n;
    }
    cfg.validate()?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global().ok();
    }
    std::fs::create_dir_all(&cfg.out)?;
    use commands as c;
    match cli.command {
        Command::GenData => c::gen_data(&cfg),
        Command::Zone => c::zone(&cfg),
        Command::ValidateZones => c::validate_zones(&cfg),
        Command::Calibrate => c::calibrate(&cfg),
        Command::Simulate => c::simulate(&cfg),
        Command::Tune => c::tune(&cfg),
        Command::BenchStaff => c::bench_staff(&cfg),
        Command::BenchZoning => c::bench_zoning(&cfg),
        Command::BenchPredictors => c::bench_predictors(&cfg),
        Command::BenchMip => c::bench_mip(&cfg),
        Command::BenchScale => c::bench_scale(&cfg),
        Command::ExportLp => c::export_lp(&cfg),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if err.downcast_ref::<BudgetExceeded>().is_some() {
        return 4;
    }
    match err.downcast_ref::<ffcs_core::Error>() {
        Some(ffcs_core::Error::BudgetExhausted) => 4,
        Some(e) if e.is_data_error() => 3,
        Some(_) => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
