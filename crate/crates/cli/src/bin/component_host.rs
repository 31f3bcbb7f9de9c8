//! Hosts one pipeline stage as a remote socket endpoint, so a simulation
//! running elsewhere can dispatch to it over the wire protocol.

use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use uam_bus::HandshakeInfo;
use uam_core::config::ScenarioConfig;
use uam_core::stages::{stage_schema_fingerprint, StageContext, ALL_STAGES};

/// Wraps a pipeline stage as a black-box network endpoint.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Stage to serve (demand, vehicle-allocation, vertiport-trajectory,
    /// mode-choice, economics).
    stage: String,

    /// Scenario description the stage is configured with; must match the
    /// orchestrator's (the handshake fingerprint and, for routing, the
    /// network fingerprint guard against mismatches).
    #[arg(long)]
    config: PathBuf,

    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:7401")]
    listen: String,

    /// Component name announced in the handshake.
    #[arg(long)]
    name: Option<String>,
}

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let args = Args::parse();
    if !ALL_STAGES.contains(&args.stage.as_str()) {
        anyhow::bail!(
            "unknown stage '{}'; expected one of {:?}",
            args.stage,
            ALL_STAGES
        );
    }
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {:?}", args.config))?;
    let config = ScenarioConfig::from_toml(&text)?;
    let ctx = Arc::new(StageContext::new(config));

    let listener = TcpListener::bind(&args.listen)
        .with_context(|| format!("binding {}", args.listen))?;
    let name = args
        .name
        .unwrap_or_else(|| format!("{}-host", args.stage));
    println!("serving stage '{}' on {}", args.stage, args.listen);

    let info = HandshakeInfo::new(stage_schema_fingerprint(), name);
    let handler = ctx.handler(&args.stage);
    let shutdown = Arc::new(AtomicBool::new(false));
    uam_bus::serve(listener, info, handler, shutdown)?;
    Ok(())
}
