//! Runs a scenario end to end and writes the run artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use uam_core::config::{AirspaceMode, ScenarioConfig};
use uam_core::orchestrator::{run_day, run_price_loop, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AirspaceArg {
    Slot,
    Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

/// Deterministic agent-based Urban Air Mobility network simulator.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Scenario description (TOML).
    scenario_file: PathBuf,

    /// Override the scenario's RNG seed.
    #[arg(long, env = "UAMSIM_SEED")]
    seed: Option<u64>,

    /// Request grouping interval in seconds (0 = one request per batch).
    #[arg(long, env = "UAMSIM_BATCH_INTERVAL", default_value_t = 0)]
    batch_interval: i64,

    /// Override the airspace management mode.
    #[arg(long, env = "UAMSIM_AIRSPACE", value_enum)]
    airspace: Option<AirspaceArg>,

    /// Iterate ticket prices across runs until they converge.
    #[arg(long, env = "UAMSIM_PRICE_LOOP", value_enum, default_value = "off")]
    price_loop: Toggle,

    /// Pipeline wiring file (TOML): per-stage dispatch mode, instance
    /// count, and remote endpoint addresses. Defaults to in-process
    /// endpoints for every stage.
    #[arg(long, env = "UAMSIM_PIPELINE")]
    pipeline: Option<PathBuf>,

    /// Output directory for the event log, metrics, and reports.
    #[arg(long, env = "UAMSIM_OUT", default_value = "out")]
    out: PathBuf,

    /// Run identifier used as the output file prefix.
    #[arg(long, env = "UAMSIM_RUN_ID", default_value = "run")]
    run_id: String,

    /// Resume from the checkpoint left in the output directory.
    #[arg(long)]
    resume: bool,
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Args::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: Args) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(&args.scenario_file)
        .with_context(|| format!("reading {:?}", args.scenario_file))?;
    let mut config = ScenarioConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        config.scenario.seed = seed;
    }
    if let Some(mode) = args.airspace {
        config.airspace.mode = match mode {
            AirspaceArg::Slot => AirspaceMode::SlotBased,
            AirspaceArg::Trajectory => AirspaceMode::TrajectoryBased,
        };
    }

    let pipeline = match &args.pipeline {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {path:?}"))?;
            toml::from_str(&text).with_context(|| format!("parsing {path:?}"))?
        }
        None => Default::default(),
    };
    let options = RunOptions {
        batch_interval_s: args.batch_interval,
        pipeline,
        out_dir: Some(args.out.clone()),
        resume: args.resume,
        run_id: args.run_id.clone(),
        ..RunOptions::default()
    };

    let report = match args.price_loop {
        Toggle::Off => run_day(&config, &options)?,
        Toggle::On => {
            let (report, convergence) = run_price_loop(&config, &options)?;
            if convergence.converged {
                println!(
                    "price loop converged in {} iterations: {:.4} EUR/km",
                    convergence.iterations, convergence.params.price_per_km_eur
                );
            } else {
                log::warn!(
                    "price loop did NOT converge within {} iterations (last {:.4} EUR/km)",
                    convergence.iterations,
                    convergence.params.price_per_km_eur
                );
            }
            report
        }
    };

    let metrics = report.world.snapshot_metrics();
    println!(
        "requests {}  uam passengers {}  mode share {:.2}%  flights {} ({} deadheads)",
        metrics.cumulative_requests,
        metrics.cumulative_uam_passengers,
        metrics.mode_share * 100.0,
        metrics.cumulative_flights,
        metrics.cumulative_deadheads,
    );
    println!(
        "revenue {:.2} EUR  operating cost {:.2} EUR  load factor {:.2}  wall time {:.1}s",
        report.ledger.revenue_eur,
        report.ledger.operating_cost_eur,
        report.ledger.load_factor,
        report.wall_time_s,
    );
    if !report.rejections.is_empty() {
        println!("rejections: {:?}", report.rejections);
    }
    println!("artifacts in {:?}", args.out);

    // Post-run invariant audit gates the exit status.
    let violations = report.world.audit(&config.airspace);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("invariant violation: {v}");
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}
