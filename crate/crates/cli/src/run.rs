use std::path::PathBuf;

use airq_core::gateway::{Gateway, GatewayConfig, GatewayError, RunEnd};

use crate::{stop_flag, CmdResult, ExitWith, Failure};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Gateway config file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Force the two-line live view on stderr.
    #[arg(long)]
    live: bool,
    /// Stop after this many cycles (overrides sampling.max_cycles).
    #[arg(long, value_name = "N")]
    max_cycles: Option<u64>,
    /// Print every counter on exit.
    #[arg(long)]
    stats: bool,
}

pub fn exit_code(e: &GatewayError) -> u8 {
    match e {
        GatewayError::Config(_) | GatewayError::NotReady => 1,
        GatewayError::SourceOpen { .. } => 2,
        GatewayError::SinkStart { .. } => 3,
        GatewayError::SinkFailed { .. } => 4,
    }
}

fn gw_fail(e: GatewayError) -> Failure {
    Failure {
        code: exit_code(&e),
        error: e.into(),
    }
}

pub fn run(args: Args) -> CmdResult {
    let mut cfg = GatewayConfig::load(&args.config)
        .map_err(anyhow::Error::msg)
        .exit_with(1)?;
    if args.live {
        cfg.sinks.live_view.enabled = true;
    }
    if let Some(n) = args.max_cycles {
        cfg.sampling.max_cycles = n;
    }
    let stop = stop_flag();
    let mut gw = Gateway::from_config(&cfg, None).map_err(gw_fail)?;
    if let Some(addr) = gw.query_addr() {
        eprintln!("airq: query server on {addr}");
    }
    if cfg.sinks.csv.enabled {
        eprintln!("airq: logging to {}", cfg.sinks.csv.dir.display());
    }
    let end = gw.run(&stop);
    let cycles = gw.cycles();
    let stats = gw.shutdown().map_err(gw_fail)?;
    let why = match end {
        RunEnd::Stopped => "interrupted",
        RunEnd::MaxCycles => "cycle limit reached",
        RunEnd::SourcesExhausted => "sources exhausted",
    };
    eprintln!("airq: stopped after {cycles} cycle(s): {why}");
    if args.stats {
        for (k, v) in stats {
            eprintln!("{k}:{v}");
        }
    }
    Ok(())
}
