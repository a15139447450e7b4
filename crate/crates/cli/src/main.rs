//! `airq`: run the station pipeline, drive it from scenarios or captures,
//! inspect captures and logs, and watch a running gateway.
//!
//! Exit codes are stable:
//!
//! | code | meaning                                                        |
//! |------|----------------------------------------------------------------|
//! | 0    | success                                                        |
//! | 1    | bad arguments, config, scenario, capture or input file        |
//! | 2    | a source could not be opened; `watch --once` found no server   |
//! | 3    | a sink could not start (CSV directory, telemetry port, query bind) |
//! | 4    | `decode` found invalid frames; a sink failed while flushing    |

mod aqi;
mod decode;
mod export;
mod run;
mod simulate;
mod watch;

use std::fmt;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "airq",
    version,
    about = "Air-quality station pipeline",
    propagate_version = true
)]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace). Overrides RUST_LOG.
    #[arg(long, global = true, value_name = "LEVEL")]
    log: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the gateway from a config file until interrupted.
    Run(run::Args),
    /// Validate, describe or run a simulator scenario through the pipeline.
    Simulate(simulate::SimulateArgs),
    /// Run a capture file through the pipeline.
    Replay(simulate::ReplayArgs),
    /// List the frames in a capture with checksum verdicts.
    Decode(decode::Args),
    /// Compute the AQI for ad hoc concentrations, e.g. `aqi pm2.5=55.5 co=5.68`.
    Aqi(aqi::Args),
    /// Show the latest reading of a running gateway as a two-line display.
    Watch(watch::Args),
    /// Convert CSV logs to JSON records.
    Export(export::Args),
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

pub type CmdResult = Result<(), Failure>;

pub trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

pub fn fail(code: u8, msg: impl fmt::Display) -> Failure {
    Failure {
        code,
        error: anyhow::anyhow!("{msg}"),
    }
}

/// Set by Ctrl-C (and SIGTERM/SIGHUP). Installed once per process.
pub fn stop_flag() -> Arc<AtomicBool> {
    let stop = Arc::new(AtomicBool::new(false));
    let s = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || s.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install signal handler: {e}");
    }
    stop
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let mut logger = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"));
    if let Some(level) = &cli.log {
        logger.parse_filters(level);
    }
    logger.init();

    let result = match cli.command {
        Command::Run(a) => run::run(a),
        Command::Simulate(a) => simulate::simulate(a),
        Command::Replay(a) => simulate::replay(a),
        Command::Decode(a) => decode::decode(a),
        Command::Aqi(a) => aqi::aqi(a),
        Command::Watch(a) => watch::watch(a),
        Command::Export(a) => export::export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("airq: error: {f}");
            ExitCode::from(f.code)
        }
    }
}
