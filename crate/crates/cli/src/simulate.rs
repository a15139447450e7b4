use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::time::Duration;

use airq_core::aqi::{load_breakpoint_table, AqiTables};
use airq_core::calibration::Mq135Config;
use airq_core::gateway::{scripted_sources, CsvSink, Gateway, Settings};
use airq_core::protocols::PmWordSet;
use airq_core::simulator::{self, Scenario, ScenarioOutput};
use airq_core::storage::{CsvLog, CsvLogConfig, RotationPolicy};
use airq_core::telemetry::TelemetryLine;
use anyhow::Context;

use crate::run::exit_code;
use crate::{fail, stop_flag, CmdResult, ExitWith, Failure};

/// Pipeline options shared by `simulate` and `replay`.
#[derive(Debug, clap::Args)]
pub struct Pipeline {
    /// Also write the CSV log into this directory.
    #[arg(long, value_name = "DIR")]
    csv: Option<PathBuf>,
    /// Omit the CSV header line.
    #[arg(long, requires = "csv")]
    headerless: bool,
    /// CSV file name prefix.
    #[arg(long, default_value = "airq", requires = "csv")]
    prefix: String,
    /// Rotate the CSV log after this many rows.
    #[arg(long, value_name = "N", requires = "csv")]
    max_rows: Option<u64>,
    /// Delay between cycles; 0 runs as fast as possible.
    #[arg(long, value_name = "MS", default_value_t = 0)]
    period_ms: u64,
    /// Use the CF=1 PM words instead of the atmospheric ones.
    #[arg(long)]
    cf1: bool,
    /// Breakpoint tables (TOML) replacing the built-in ones.
    #[arg(long, value_name = "FILE")]
    breakpoints: Option<PathBuf>,
    /// Do not print telemetry lines.
    #[arg(long, short)]
    quiet: bool,
    /// Print every counter when done.
    #[arg(long)]
    stats: bool,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(required_unless_present = "reference", conflicts_with = "reference")]
    scenario: Option<PathBuf>,
    /// Use the built-in ten-cycle reference log scenario.
    #[arg(long)]
    reference: bool,
    /// Validate and summarize the scenario without running it.
    #[arg(long)]
    describe: bool,
    /// Print the scenario as normalized TOML and exit.
    #[arg(long, conflicts_with = "describe")]
    show: bool,
    /// Write the generated sensor traffic to this capture file.
    #[arg(long, value_name = "FILE")]
    dump: Option<PathBuf>,
    #[command(flatten)]
    pipeline: Pipeline,
}

#[derive(Debug, clap::Args)]
pub struct ReplayArgs {
    /// Capture file.
    capture: PathBuf,
    /// MQ135 calibration: the scenario the capture came from, a gateway
    /// config with a [calibration] table, or a file of bare calibration keys.
    #[arg(long, value_name = "FILE")]
    calibration: Option<PathBuf>,
    #[command(flatten)]
    pipeline: Pipeline,
}

fn load_scenario(args: &SimulateArgs) -> Result<Scenario, Failure> {
    match &args.scenario {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read scenario {}", p.display()))
                .exit_with(1)?;
            Scenario::from_toml(&text)
                .with_context(|| format!("{}", p.display()))
                .exit_with(1)
        }
        None => Ok(Scenario::reference_log()),
    }
}

pub fn simulate(args: SimulateArgs) -> CmdResult {
    let scenario = load_scenario(&args)?;
    if args.describe {
        print!("{}", scenario.describe());
        return Ok(());
    }
    if args.show {
        print!("{}", scenario.to_toml());
        return Ok(());
    }
    let cal = scenario.calibration();
    let out = simulator::run_scenario(&scenario, &cal).exit_with(1)?;
    if let Some(path) = &args.dump {
        std::fs::write(path, out.to_dump())
            .with_context(|| format!("cannot write capture {}", path.display()))
            .exit_with(1)?;
        eprintln!("airq: wrote {} cycle(s) to {}", out.cycles.len(), path.display());
    }
    drive(out, cal, &args.pipeline)
}

pub fn replay(args: ReplayArgs) -> CmdResult {
    let bytes = std::fs::read(&args.capture)
        .with_context(|| format!("cannot read capture {}", args.capture.display()))
        .exit_with(1)?;
    let cycles = simulator::replay_capture(&bytes)
        .with_context(|| format!("{}", args.capture.display()))
        .exit_with(1)?;
    let cal = match &args.calibration {
        Some(p) => load_calibration(p).exit_with(1)?,
        None => Mq135Config::default(),
    };
    drive(ScenarioOutput { cycles, truth: vec![] }, cal, &args.pipeline)
}

pub fn load_calibration(path: &Path) -> anyhow::Result<Mq135Config> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    // A scenario without its own table was rendered with the default curve.
    if let Ok(s) = Scenario::from_toml(&text) {
        return Ok(s.calibration());
    }
    let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("{}", path.display()))?;
    let value = match table.remove("calibration") {
        Some(v) => v,
        None => toml::Value::Table(table),
    };
    let cfg: Mq135Config = value
        .try_into()
        .with_context(|| format!("{}: calibration", path.display()))?;
    cfg.validate().with_context(|| format!("{}", path.display()))?;
    Ok(cfg)
}

pub fn load_tables(path: Option<&Path>) -> anyhow::Result<AqiTables> {
    match path {
        None => Ok(AqiTables::standard()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            load_breakpoint_table(&text).with_context(|| format!("{}", p.display()))
        }
    }
}

/// Feeds rendered traffic through the gateway, printing one telemetry line
/// per cycle on stdout.
fn drive(out: ScenarioOutput, calibration: Mq135Config, p: &Pipeline) -> CmdResult {
    let cycles = out.cycles.len();
    let settings = Settings {
        period: Duration::from_millis(p.period_ms.max(1)),
        pm_words: if p.cf1 { PmWordSet::Cf1 } else { PmWordSet::Atm },
        history_capacity: cycles.max(1),
        tables: load_tables(p.breakpoints.as_deref()).exit_with(1)?,
        calibration,
        ..Settings::default()
    };
    let mut gw = Gateway::new(settings, scripted_sources(out.into_channel_scripts(), "sim")).map_err(|e| Failure {
        code: exit_code(&e),
        error: e.into(),
    })?;
    if let Some(dir) = &p.csv {
        let log = CsvLog::create(CsvLogConfig {
            dir: dir.clone(),
            prefix: p.prefix.clone(),
            headerless: p.headerless,
            rotation: RotationPolicy {
                max_rows: p.max_rows.unwrap_or(0),
                max_bytes: 0,
            },
        })
        .exit_with(3)?;
        eprintln!("airq: logging to {}", log.path().display());
        gw.add_sink(Box::new(CsvSink::new(log)), cycles.max(1))
            .map_err(|e| fail(exit_code(&e), e))?;
    }

    let stop = stop_flag();
    let stdout = io::stdout();
    let mut lines = stdout.lock();
    while !gw.sources_exhausted() && !stop.load(Ordering::SeqCst) {
        let r = gw.step();
        if !p.quiet {
            let wire = TelemetryLine::from_reading(&r).to_wire();
            if lines.write_all(wire.as_bytes()).and_then(|_| lines.flush()).is_err() {
                // Reader went away; stop quietly.
                break;
            }
        }
        if p.period_ms > 0 {
            std::thread::sleep(Duration::from_millis(p.period_ms));
        }
    }
    let n = gw.cycles();
    let stats = gw.shutdown().map_err(|e| fail(exit_code(&e), e))?;
    let faults: u64 = stats
        .iter()
        .filter(|(k, _)| k.starts_with("faults."))
        .map(|(_, v)| v)
        .sum();
    eprintln!("airq: {n} cycle(s), {faults} sensor fault(s)");
    if p.stats {
        for (k, v) in stats {
            eprintln!("{k}:{v}");
        }
    }
    Ok(())
}
