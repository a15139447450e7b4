//! Gateway configuration file.
//!
//! ```toml
//! location = "rooftop"
//!
//! [sampling]
//! period_secs = 1.0
//! history_capacity = 3600
//! stale_after = 5
//! pm_words = "atm"
//!
//! [sources.pms5003]
//! kind = "stream"                 # stream | replay | simulator
//! endpoint = "tcp://127.0.0.1:9001"
//!
//! [sources.dht11]
//! kind = "simulator"
//! endpoint = "scenario.toml"
//!
//! [sources.mq135]
//! kind = "replay"
//! endpoint = "capture.dump"
//!
//! [sinks.csv]
//! dir = "logs"
//!
//! [sinks.telemetry]
//! endpoint = "/dev/rfcomm0"
//!
//! [sinks.query]
//! bind = "127.0.0.1:7878"
//!
//! [calibration]
//! adc_max = 1023
//! ```
//!
//! Relative paths are resolved against the config file's directory. The
//! endpoint of each source can be overridden with `AIRQ_PMS5003_ENDPOINT`,
//! `AIRQ_DHT11_ENDPOINT` and `AIRQ_MQ135_ENDPOINT`. A `[breakpoints]` table
//! with `pm2_5`, `pm10` and `co` subsections replaces the built-in tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aqi::{AqiTables, RawTables};
use crate::calibration::Mq135Config;
use crate::protocols::{PmWordSet, SensorKind};
use crate::storage::CsvLogConfig;
use crate::telemetry::query::QueryConfig;
use crate::telemetry::PortEndpoint;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    /// Free text naming where the station is; logged at startup.
    pub location: Option<String>,
    pub sampling: Sampling,
    pub sources: Sources,
    pub sinks: Sinks,
    /// Converter and curve used to decode the MQ135 channel. When absent and
    /// a simulator source supplies one, that is used.
    pub calibration: Option<Mq135Config>,
    pub breakpoints: Option<RawTables>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sampling {
    pub period_secs: f64,
    pub history_capacity: usize,
    /// Consecutive cycles a source must report closed before it is reopened.
    pub stale_after: u32,
    pub pm_words: PmWordSet,
    /// Stop after this many cycles; 0 runs until interrupted or until every
    /// finite source is used up.
    pub max_cycles: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            period_secs: 1.0,
            history_capacity: 3600,
            stale_after: 5,
            pm_words: PmWordSet::Atm,
            max_cycles: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// `tcp://host:port` or a device/file path, read as a byte stream.
    Stream,
    /// A capture file; the source takes its own channel from it.
    Replay,
    /// A scenario file; the source takes its own channel from the rendered
    /// scenario.
    Simulator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sources {
    pub pms5003: Option<SourceConfig>,
    pub dht11: Option<SourceConfig>,
    pub mq135: Option<SourceConfig>,
}

impl Sources {
    pub fn get(&self, kind: SensorKind) -> Option<&SourceConfig> {
        match kind {
            SensorKind::Pms5003 => self.pms5003.as_ref(),
            SensorKind::Dht11 => self.dht11.as_ref(),
            SensorKind::Adc => self.mq135.as_ref(),
        }
    }

    fn get_mut(&mut self, kind: SensorKind) -> Option<&mut SourceConfig> {
        match kind {
            SensorKind::Pms5003 => self.pms5003.as_mut(),
            SensorKind::Dht11 => self.dht11.as_mut(),
            SensorKind::Adc => self.mq135.as_mut(),
        }
    }

    /// All three sources pointing at one scenario file.
    pub fn simulator(scenario: impl Into<String>) -> Self {
        let sc = SourceConfig {
            kind: SourceKind::Simulator,
            endpoint: scenario.into(),
        };
        Self {
            pms5003: Some(sc.clone()),
            dht11: Some(sc.clone()),
            mq135: Some(sc),
        }
    }
}

/// Environment variable that overrides a source's endpoint.
pub fn endpoint_env_var(kind: SensorKind) -> &'static str {
    match kind {
        SensorKind::Pms5003 => "AIRQ_PMS5003_ENDPOINT",
        SensorKind::Dht11 => "AIRQ_DHT11_ENDPOINT",
        SensorKind::Adc => "AIRQ_MQ135_ENDPOINT",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSinkConfig {
    pub enabled: bool,
    pub queue: usize,
    pub dir: PathBuf,
    pub prefix: String,
    pub headerless: bool,
    pub max_rows: u64,
    pub max_bytes: u64,
}

impl Default for CsvSinkConfig {
    fn default() -> Self {
        let log = CsvLogConfig::default();
        Self {
            enabled: true,
            queue: 256,
            dir: log.dir,
            prefix: log.prefix,
            headerless: log.headerless,
            max_rows: log.rotation.max_rows,
            max_bytes: log.rotation.max_bytes,
        }
    }
}

impl CsvSinkConfig {
    pub fn log_config(&self) -> CsvLogConfig {
        CsvLogConfig {
            dir: self.dir.clone(),
            prefix: self.prefix.clone(),
            headerless: self.headerless,
            rotation: crate::storage::RotationPolicy {
                max_rows: self.max_rows,
                max_bytes: self.max_bytes,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetrySinkConfig {
    pub enabled: bool,
    pub queue: usize,
    pub endpoint: PortEndpoint,
    /// Seconds between reconnect attempts after the port closes.
    pub retry_secs: u64,
}

impl Default for TelemetrySinkConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            queue: 256,
            endpoint: PortEndpoint::Stdout,
            retry_secs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySinkConfig {
    pub enabled: bool,
    pub bind: String,
    /// Per-subscriber queue length.
    pub subscriber_queue: usize,
    pub max_connections: usize,
    pub write_timeout_secs: u64,
    pub subscriber_send_buffer: Option<usize>,
}

impl Default for QuerySinkConfig {
    fn default() -> Self {
        let q = QueryConfig::default();
        Self {
            enabled: true,
            bind: q.bind,
            subscriber_queue: 64,
            max_connections: q.max_connections,
            write_timeout_secs: q.write_timeout_secs,
            subscriber_send_buffer: q.subscriber_send_buffer,
        }
    }
}

impl QuerySinkConfig {
    pub fn server_config(&self) -> QueryConfig {
        QueryConfig {
            bind: self.bind.clone(),
            max_connections: self.max_connections,
            write_timeout_secs: self.write_timeout_secs,
            subscriber_send_buffer: self.subscriber_send_buffer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveViewConfig {
    pub enabled: bool,
    pub queue: usize,
}

impl Default for LiveViewConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            queue: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sinks {
    pub csv: CsvSinkConfig,
    pub telemetry: TelemetrySinkConfig,
    pub query: QuerySinkConfig,
    pub live_view: LiveViewConfig,
}

impl GatewayConfig {
    pub fn from_toml(src: &str) -> Result<Self, String> {
        let cfg: GatewayConfig = toml::from_str(src).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, applies environment overrides, resolves relative paths against
    /// the file's directory and validates.
    pub fn load(path: &Path) -> Result<Self, String> {
        let src = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: GatewayConfig = toml::from_str(&src).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate().map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for kind in SensorKind::ALL {
            if let (Some(src), Some(v)) = (self.sources.get_mut(kind), lookup(endpoint_env_var(kind))) {
                log::info!("{} endpoint overridden from {}", kind.as_str(), endpoint_env_var(kind));
                src.endpoint = v;
            }
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &str| -> String {
            if Path::new(p).is_absolute() {
                p.to_string()
            } else {
                base.join(p).to_string_lossy().into_owned()
            }
        };
        for kind in SensorKind::ALL {
            if let Some(src) = self.sources.get_mut(kind) {
                let is_path = !(src.kind == SourceKind::Stream && src.endpoint.starts_with("tcp://"));
                if is_path {
                    src.endpoint = join(&src.endpoint);
                }
            }
        }
        if self.sinks.csv.dir.is_relative() {
            self.sinks.csv.dir = base.join(&self.sinks.csv.dir);
        }
        if let PortEndpoint::Path(p) = &self.sinks.telemetry.endpoint {
            if p.is_relative() {
                self.sinks.telemetry.endpoint = PortEndpoint::Path(base.join(p));
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let s = &self.sampling;
        if !(s.period_secs.is_finite() && s.period_secs > 0.0) {
            return Err(format!("sampling.period_secs must be positive, got {}", s.period_secs));
        }
        if s.history_capacity == 0 {
            return Err("sampling.history_capacity must be at least 1".into());
        }
        if s.stale_after == 0 {
            return Err("sampling.stale_after must be at least 1".into());
        }
        for kind in SensorKind::ALL {
            match self.sources.get(kind) {
                None => return Err(format!("sources.{} is missing", section(kind))),
                Some(src) if src.endpoint.is_empty() => {
                    return Err(format!("sources.{}.endpoint is empty", section(kind)))
                }
                Some(src) if src.kind == SourceKind::Stream && src.endpoint.starts_with("tcp://") => {
                    src.endpoint
                        .parse::<PortEndpoint>()
                        .map_err(|e| format!("sources.{}: {e}", section(kind)))?;
                }
                Some(_) => {}
            }
        }
        let k = &self.sinks;
        if !(k.csv.enabled || k.telemetry.enabled || k.query.enabled || k.live_view.enabled) {
            return Err("at least one sink must be enabled".into());
        }
        for (name, q) in [
            ("csv", k.csv.queue),
            ("telemetry", k.telemetry.queue),
            ("live_view", k.live_view.queue),
            ("query.subscriber", k.query.subscriber_queue),
        ] {
            if q == 0 {
                return Err(format!("sinks.{name} queue must be at least 1"));
            }
        }
        if k.csv.prefix.is_empty() || k.csv.prefix.contains(['/', '\\']) {
            return Err(format!("sinks.csv.prefix `{}` is not a plain file name", k.csv.prefix));
        }
        if let Some(c) = &self.calibration {
            c.validate().map_err(|e| format!("calibration: {e}"))?;
        }
        self.tables()?;
        Ok(())
    }

    pub fn tables(&self) -> Result<AqiTables, String> {
        match &self.breakpoints {
            None => Ok(AqiTables::standard()),
            Some(raw) => raw.clone().validate().map_err(|e| format!("breakpoints: {e}")),
        }
    }
}

/// Config section name for a channel.
pub fn section(kind: SensorKind) -> &'static str {
    match kind {
        SensorKind::Adc => "mq135",
        k => k.as_str(),
    }
}
