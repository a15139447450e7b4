//! The sampling loop.
//!
//! Every cycle each channel is polled once and decoded. A channel that
//! yields nothing usable this cycle keeps its last good value and is flagged
//! stale; before the first good value that is zero. The resulting reading is
//! published to the history ring, then offered to the sinks in order (CSV,
//! telemetry, live view) and to query subscribers. Offering never waits on a
//! sink.
//!
//! The loop owns the sources and is the only writer of the ring. Query
//! connections read through a [`GatewayHandle`].

pub mod config;
pub mod ring;
pub mod sink;
pub mod source;

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use arc_swap::ArcSwap;
use chrono::Utc;
use thiserror::Error;

use crate::aqi::{AqiTables, OffScale, Pollutant};
use crate::calibration::{self, Mq135Config};
use crate::protocols::{adc, dht11, PmWordSet, Pms5003Error, Pms5003Scanner, ScanEvent, SensorKind};
use crate::reading::{CompositeReading, FaultKind, SensorFault, Staleness, Timestamp};
use crate::simulator::{self, Scenario};
use crate::storage::CsvLog;
use crate::telemetry::query::{QueryBackend, QueryConfig, QueryServer, SubscriberHub};
use crate::telemetry::TelemetryPort;

pub use config::{GatewayConfig, SourceConfig, SourceKind};
pub use ring::HistoryRing;
pub use sink::{CsvSink, LiveViewSink, Sink, SinkProbe, SinkRunner, SinkStats, TelemetrySink};
pub use source::{ByteSource, Poll, ScriptedSource, StreamEndpoint, StreamSource};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot open {sensor} source `{endpoint}`: {source}")]
    SourceOpen {
        sensor: &'static str,
        endpoint: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot start {sink} sink: {reason}")]
    SinkStart { sink: &'static str, reason: String },
    #[error("no reading has been produced yet")]
    NotReady,
    #[error("sink {sink} failed: {reason}")]
    SinkFailed { sink: &'static str, reason: String },
}

/// Why [`Gateway::run`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEnd {
    Stopped,
    MaxCycles,
    SourcesExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub period: Duration,
    pub stale_after: u32,
    pub pm_words: PmWordSet,
    pub max_cycles: u64,
    pub history_capacity: usize,
    pub subscriber_queue: usize,
    pub tables: AqiTables,
    pub calibration: Mq135Config,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            period: Duration::from_secs(1),
            stale_after: 5,
            pm_words: PmWordSet::Atm,
            max_cycles: 0,
            history_capacity: 3600,
            subscriber_queue: 64,
            tables: AqiTables::standard(),
            calibration: Mq135Config::default(),
        }
    }
}

#[derive(Debug)]
struct Shared {
    ring: HistoryRing,
    hub: SubscriberHub,
    counters: ArcSwap<BTreeMap<String, u64>>,
    sinks: ArcSwap<Vec<SinkProbe>>,
}

/// Cheap, cloneable read access to a running gateway.
#[derive(Debug, Clone)]
pub struct GatewayHandle {
    shared: Arc<Shared>,
}

impl GatewayHandle {
    /// The newest reading.
    pub fn snapshot(&self) -> Result<Arc<CompositeReading>, GatewayError> {
        self.shared.ring.latest().ok_or(GatewayError::NotReady)
    }

    /// Up to `k` newest readings, oldest first.
    pub fn history(&self, k: usize) -> Vec<Arc<CompositeReading>> {
        self.shared.ring.last(k)
    }

    pub fn sink_stats(&self) -> Vec<(&'static str, SinkStats)> {
        self.shared.sinks.load().iter().map(|p| (p.name(), p.stats())).collect()
    }

    pub fn subscriber_hub(&self) -> &SubscriberHub {
        &self.shared.hub
    }

    /// Every counter, sorted by key.
    pub fn stats_map(&self) -> BTreeMap<String, u64> {
        let mut m = (**self.shared.counters.load()).clone();
        for (name, s) in self.sink_stats() {
            for (k, v) in [
                ("delivered", s.delivered),
                ("dropped", s.dropped),
                ("failed", s.failed),
                ("lost", s.lost),
                ("queued", s.queued),
            ] {
                m.insert(format!("sink.{name}.{k}"), v);
            }
        }
        let hub = &self.shared.hub;
        m.insert("subscribers.active".into(), hub.count() as u64);
        m.insert("subscribers.dropped".into(), hub.total_drops());
        for (id, d) in hub.drops() {
            m.insert(format!("subscriber.{id}.dropped"), d);
        }
        for (id, n) in hub.backlog() {
            m.insert(format!("subscriber.{id}.queued"), n as u64);
        }
        m.insert("history.len".into(), self.shared.ring.len() as u64);
        m.insert("history.capacity".into(), self.shared.ring.capacity() as u64);
        m
    }
}

impl QueryBackend for GatewayHandle {
    fn latest(&self) -> Option<Arc<CompositeReading>> {
        self.shared.ring.latest()
    }

    fn history(&self, k: usize) -> Vec<Arc<CompositeReading>> {
        self.shared.ring.last(k)
    }

    fn stats(&self) -> Vec<(String, u64)> {
        self.stats_map().into_iter().collect()
    }

    fn subscribers(&self) -> &SubscriberHub {
        &self.shared.hub
    }
}

struct Channel {
    kind: SensorKind,
    source: Box<dyn ByteSource>,
    /// Consecutive cycles the source has reported closed.
    lost_for: u32,
}

#[derive(Debug, Clone, Copy, Default)]
struct Values {
    pm2_5: u16,
    pm10: u16,
    temperature: f64,
    humidity: f64,
    co: f64,
}

enum Decoded {
    Pm(u16, u16),
    Climate(f64, f64),
    Co(f64),
}

pub struct Gateway {
    settings: Settings,
    channels: Vec<Channel>,
    scanner: Pms5003Scanner,
    values: Values,
    shared: Arc<Shared>,
    sinks: Vec<SinkRunner>,
    query: Option<QueryServer>,
    seq: u64,
    started: Instant,
    counters: BTreeMap<String, u64>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("seq", &self.seq)
            .field("settings", &self.settings)
            .finish()
    }
}

fn bump(m: &mut BTreeMap<String, u64>, key: impl Into<String>, by: u64) {
    *m.entry(key.into()).or_default() += by;
}

impl Gateway {
    /// `sources` must hold one source per [`SensorKind`], in
    /// [`SensorKind::ALL`] order.
    pub fn new(settings: Settings, sources: [Box<dyn ByteSource>; 3]) -> Result<Self, GatewayError> {
        if settings.period.is_zero() {
            return Err(GatewayError::Config("sample period must be positive".into()));
        }
        if settings.history_capacity == 0 || settings.stale_after == 0 || settings.subscriber_queue == 0 {
            return Err(GatewayError::Config(
                "history capacity, stale_after and subscriber queue must be at least 1".into(),
            ));
        }
        check_tables(&settings.tables).map_err(GatewayError::Config)?;
        settings
            .calibration
            .validate()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let channels = SensorKind::ALL
            .into_iter()
            .zip(sources)
            .map(|(kind, source)| Channel {
                kind,
                source,
                lost_for: 0,
            })
            .collect();
        let shared = Arc::new(Shared {
            ring: HistoryRing::new(settings.history_capacity),
            hub: SubscriberHub::new(settings.subscriber_queue),
            counters: ArcSwap::from_pointee(BTreeMap::new()),
            sinks: ArcSwap::from_pointee(Vec::new()),
        });
        let mut gw = Self {
            settings,
            channels,
            scanner: Pms5003Scanner::new(),
            values: Values::default(),
            shared,
            sinks: Vec::new(),
            query: None,
            seq: 0,
            started: Instant::now(),
            counters: BTreeMap::new(),
        };
        gw.publish_counters();
        Ok(gw)
    }

    /// Builds a gateway with every source and sink the config names. The
    /// query server is bound first, then sinks start in delivery order: CSV,
    /// telemetry, live view.
    pub fn from_config(cfg: &GatewayConfig, live_view: Option<LiveViewSink>) -> Result<Self, GatewayError> {
        cfg.validate().map_err(GatewayError::Config)?;
        let (sources, scenario_cal) = open_sources(cfg)?;
        let calibration = cfg.calibration.or(scenario_cal).unwrap_or_default();
        let s = &cfg.sampling;
        let settings = Settings {
            period: Duration::from_secs_f64(s.period_secs),
            stale_after: s.stale_after,
            pm_words: s.pm_words,
            max_cycles: s.max_cycles,
            history_capacity: s.history_capacity,
            subscriber_queue: cfg.sinks.query.subscriber_queue,
            tables: cfg.tables().map_err(GatewayError::Config)?,
            calibration,
        };
        let mut gw = Gateway::new(settings, sources)?;
        if let Some(loc) = &cfg.location {
            log::info!("station location: {loc}");
        }
        let k = &cfg.sinks;
        // Bind first: a taken port should not leave an empty log behind.
        if k.query.enabled {
            gw.serve_queries(&k.query.server_config())?;
        }
        if k.csv.enabled {
            let log = CsvLog::create(k.csv.log_config()).map_err(|e| GatewayError::SinkStart {
                sink: "csv",
                reason: e.to_string(),
            })?;
            gw.add_sink(Box::new(CsvSink::new(log)), k.csv.queue)?;
        }
        if k.telemetry.enabled {
            let port = TelemetryPort::open(
                k.telemetry.endpoint.clone(),
                Duration::from_secs(k.telemetry.retry_secs),
            )
            .map_err(|e| GatewayError::SinkStart {
                sink: "telemetry",
                reason: format!("{}: {e}", k.telemetry.endpoint),
            })?;
            gw.add_sink(Box::new(TelemetrySink::new(port)), k.telemetry.queue)?;
        }
        if k.live_view.enabled {
            let view = live_view.unwrap_or_else(LiveViewSink::terminal);
            gw.add_sink(Box::new(view), k.live_view.queue)?;
        }
        Ok(gw)
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn handle(&self) -> GatewayHandle {
        GatewayHandle {
            shared: self.shared.clone(),
        }
    }

    /// Appends a sink after those already added.
    pub fn add_sink(&mut self, sink: Box<dyn Sink>, queue: usize) -> Result<(), GatewayError> {
        let name = sink.name();
        if queue == 0 {
            return Err(GatewayError::Config(format!("{name} queue must be at least 1")));
        }
        let runner = SinkRunner::spawn(sink, queue).map_err(|e| GatewayError::SinkStart {
            sink: name,
            reason: e.to_string(),
        })?;
        self.sinks.push(runner);
        self.shared
            .sinks
            .store(Arc::new(self.sinks.iter().map(SinkRunner::probe).collect()));
        Ok(())
    }

    pub fn serve_queries(&mut self, cfg: &QueryConfig) -> Result<SocketAddr, GatewayError> {
        let server = QueryServer::bind(cfg, Arc::new(self.handle())).map_err(|e| GatewayError::SinkStart {
            sink: "query",
            reason: e.to_string(),
        })?;
        let addr = server.local_addr();
        self.query = Some(server);
        Ok(addr)
    }

    pub fn query_addr(&self) -> Option<SocketAddr> {
        self.query.as_ref().map(QueryServer::local_addr)
    }

    pub fn cycles(&self) -> u64 {
        self.seq
    }

    pub fn sources_exhausted(&self) -> bool {
        self.channels.iter().all(|c| c.source.exhausted())
    }

    fn decode(&mut self, kind: SensorKind, bytes: &[u8]) -> Result<Decoded, FaultKind> {
        match kind {
            SensorKind::Pms5003 => {
                self.scanner.push(bytes);
                let mut frame = None;
                let mut rejected = None;
                while let Some(ev) = self.scanner.next_event() {
                    match ev {
                        ScanEvent::Frame { frame: f, .. } => frame = Some(f),
                        ScanEvent::Rejected { error, .. } => {
                            rejected = Some(match error {
                                Pms5003Error::BadChecksum { .. } => FaultKind::BadChecksum,
                                Pms5003Error::BadLength(_) => FaultKind::BadLength,
                                _ => FaultKind::Truncated,
                            })
                        }
                    }
                }
                let w = self.settings.pm_words;
                match (frame, rejected) {
                    (Some(f), _) => Ok(Decoded::Pm(f.pm2_5(w), f.pm10(w))),
                    (None, Some(k)) => Err(k),
                    (None, None) => Err(FaultKind::Truncated),
                }
            }
            SensorKind::Dht11 => {
                if bytes.len() < dht11::FRAME_LEN {
                    return Err(FaultKind::Truncated);
                }
                if !bytes.len().is_multiple_of(dht11::FRAME_LEN) {
                    return Err(FaultKind::BadLength);
                }
                let f = dht11::decode(&bytes[bytes.len() - dht11::FRAME_LEN..]).map_err(|_| FaultKind::BadChecksum)?;
                if let Some(w) = f.range_warning() {
                    log::debug!("dht11 outside rated range: {w:?}");
                    bump(&mut self.counters, "warnings.dht11.out-of-range", 1);
                }
                Ok(Decoded::Climate(f.temperature(), f.humidity()))
            }
            SensorKind::Adc => match adc::last_sample(bytes) {
                (None, _) => Err(FaultKind::Truncated),
                (Some(_), true) => Err(FaultKind::BadLength),
                (Some(count), false) => calibration::adc_to_ppm(u32::from(count), &self.settings.calibration)
                    .map(|ppm| Decoded::Co((ppm * 100.0).round() / 100.0))
                    .map_err(|_| FaultKind::Saturated),
            },
        }
    }

    /// Runs one cycle immediately and returns the published reading.
    pub fn step(&mut self) -> Arc<CompositeReading> {
        let mut faults = Vec::new();
        let mut stale = Staleness::default();
        for i in 0..self.channels.len() {
            let kind = self.channels[i].kind;
            let poll = self.channels[i].source.poll_cycle();
            let lost = &mut self.channels[i].lost_for;
            *lost = if poll == Poll::Closed { *lost + 1 } else { 0 };
            let outcome = match poll {
                Poll::Data(bytes) => self.decode(kind, &bytes),
                Poll::Silent => Err(FaultKind::Silent),
                Poll::Closed => Err(FaultKind::SourceLost),
            };
            let ch = &mut self.channels[i];
            match outcome {
                Ok(d) => match d {
                    Decoded::Pm(a, b) => (self.values.pm2_5, self.values.pm10) = (a, b),
                    Decoded::Climate(t, h) => (self.values.temperature, self.values.humidity) = (t, h),
                    Decoded::Co(c) => self.values.co = c,
                },
                Err(fk) => {
                    faults.push(SensorFault { sensor: kind, kind: fk });
                    stale.set(kind, true);
                    bump(
                        &mut self.counters,
                        format!("faults.{}.{}", config::section(kind), fk.as_str()),
                        1,
                    );
                    if ch.lost_for >= self.settings.stale_after && !ch.source.exhausted() {
                        ch.lost_for = 0;
                        let name = config::section(kind);
                        bump(&mut self.counters, format!("source.{name}.reopen-attempts"), 1);
                        match ch.source.reopen() {
                            Ok(()) => {
                                log::info!("{name} source {} reopened", ch.source.describe());
                                bump(&mut self.counters, format!("source.{name}.reopened"), 1);
                                if kind == SensorKind::Pms5003 {
                                    self.scanner = Pms5003Scanner::new();
                                }
                            }
                            Err(e) => log::warn!("{name} source {}: reopen failed: {e}", ch.source.describe()),
                        }
                    }
                }
            }
        }

        self.seq += 1;
        let v = self.values;
        let tables = &self.settings.tables;
        let sample = crate::aqi::Sample::full(f64::from(v.pm2_5), f64::from(v.pm10), v.co);
        let aqi = tables
            .evaluate(&sample, OffScale::Clamp)
            .expect("tables start at zero, so clamped evaluation cannot fail");
        let clamped = Pollutant::ALL.into_iter().any(|p| {
            let t = tables.table(p);
            let top = t.top().map_or(0.0, |r| t.decimal(r.c_high));
            sample.get(p).is_some_and(|c| c > top)
        });
        if clamped {
            bump(&mut self.counters, "aqi.clamped", 1);
        }
        let reading = Arc::new(CompositeReading {
            seq: self.seq,
            timestamp: Timestamp {
                wall: Utc::now(),
                mono_ms: self.started.elapsed().as_millis() as u64,
            },
            pm2_5: v.pm2_5,
            pm10: v.pm10,
            temperature: v.temperature,
            humidity: v.humidity,
            co: v.co,
            aqi,
            faults,
            stale,
        });

        self.shared.ring.push(reading.clone());
        for s in &self.sinks {
            s.offer(&reading);
        }
        self.shared.hub.publish(&reading);
        self.publish_counters();
        reading
    }

    fn publish_counters(&mut self) {
        let st = self.scanner.stats();
        let mut m = self.counters.clone();
        m.insert("cycles".into(), self.seq);
        m.insert("seq.latest".into(), self.seq);
        m.insert("resync.pms5003.frames".into(), st.frames);
        m.insert("resync.pms5003.bad-checksum".into(), st.bad_checksum);
        m.insert("resync.pms5003.bad-length".into(), st.bad_length);
        m.insert("resync.pms5003.skipped-octets".into(), st.skipped_octets);
        if let Some(r) = self.shared.ring.latest() {
            for ch in &self.channels {
                m.insert(
                    format!("stale.{}", config::section(ch.kind)),
                    u64::from(r.stale.get(ch.kind)),
                );
            }
        }
        self.shared.counters.store(Arc::new(m));
    }

    /// Samples on the configured cadence until `stop` is set, `max_cycles`
    /// is reached or every source has run dry. The cycle in progress always
    /// completes.
    pub fn run(&mut self, stop: &AtomicBool) -> RunEnd {
        let period = self.settings.period;
        let mut next = Instant::now();
        loop {
            if stop.load(Ordering::SeqCst) {
                return RunEnd::Stopped;
            }
            if self.settings.max_cycles > 0 && self.seq >= self.settings.max_cycles {
                return RunEnd::MaxCycles;
            }
            if self.sources_exhausted() {
                return RunEnd::SourcesExhausted;
            }
            self.step();
            next += period;
            let now = Instant::now();
            if now > next {
                bump(&mut self.counters, "cadence.overruns", 1);
                next = now;
                continue;
            }
            while !stop.load(Ordering::SeqCst) {
                let left = next.saturating_duration_since(Instant::now());
                if left.is_zero() {
                    break;
                }
                std::thread::sleep(left.min(Duration::from_millis(20)));
            }
        }
    }

    /// Drains and closes every sink (CSV flushed to disk) and stops the
    /// query server. Returns the first sink error, after closing all.
    pub fn shutdown(mut self) -> Result<BTreeMap<String, u64>, GatewayError> {
        let mut first_err = None;
        for s in &mut self.sinks {
            if let Err(reason) = s.finish() {
                log::error!("sink {}: {reason}", s.name());
                first_err.get_or_insert(GatewayError::SinkFailed { sink: s.name(), reason });
            }
        }
        if let Some(q) = self.query.take() {
            q.shutdown();
        }
        let stats = self.handle().stats_map();
        match first_err {
            Some(e) => Err(e),
            None => Ok(stats),
        }
    }
}

/// The gateway clamps off-scale values, which needs every table to start at
/// zero.
fn check_tables(tables: &AqiTables) -> Result<(), String> {
    for t in tables.iter() {
        match t.rows().first() {
            Some(r) if r.c_low == 0 => {}
            _ => return Err(format!("{} breakpoint table must start at 0", t.pollutant().as_str())),
        }
    }
    Ok(())
}

/// Per-channel byte scripts, in [`SensorKind::ALL`] order.
type Scripts = [Vec<Option<Vec<u8>>>; 3];
type SourceSet = [Box<dyn ByteSource>; 3];

fn open_sources(cfg: &GatewayConfig) -> Result<(SourceSet, Option<Mq135Config>), GatewayError> {
    // Scenario and capture files are rendered once and shared by channel.
    let mut rendered: HashMap<(SourceKind, String), Scripts> = HashMap::new();
    let mut scenario_cal = None;
    let mut out: Vec<Box<dyn ByteSource>> = Vec::new();
    for (i, kind) in SensorKind::ALL.into_iter().enumerate() {
        let sc = cfg.sources.get(kind).expect("validated");
        let name = config::section(kind);
        let open_err = |source: io::Error| GatewayError::SourceOpen {
            sensor: name,
            endpoint: sc.endpoint.clone(),
            source,
        };
        let src: Box<dyn ByteSource> = match sc.kind {
            SourceKind::Stream => Box::new(StreamSource::open(StreamEndpoint::parse(&sc.endpoint)).map_err(open_err)?),
            SourceKind::Simulator | SourceKind::Replay => {
                let key = (sc.kind, sc.endpoint.clone());
                if !rendered.contains_key(&key) {
                    let scripts = match sc.kind {
                        SourceKind::Simulator => {
                            let text = std::fs::read_to_string(&sc.endpoint).map_err(open_err)?;
                            let scenario = Scenario::from_toml(&text)
                                .map_err(|e| GatewayError::Config(format!("{}: {e}", sc.endpoint)))?;
                            let synth = scenario.calibration.or(cfg.calibration).unwrap_or_default();
                            if let (Some(a), Some(b)) = (scenario.calibration, cfg.calibration) {
                                if a != b {
                                    log::warn!("{}: scenario calibration differs from the gateway's", sc.endpoint);
                                }
                            }
                            scenario_cal = scenario_cal.or(scenario.calibration);
                            simulator::run_scenario(&scenario, &synth)
                                .map_err(|e| GatewayError::Config(format!("{}: {e}", sc.endpoint)))?
                                .into_channel_scripts()
                        }
                        _ => {
                            let bytes = std::fs::read(&sc.endpoint).map_err(open_err)?;
                            let cycles = simulator::replay_capture(&bytes)
                                .map_err(|e| GatewayError::Config(format!("{}: {e}", sc.endpoint)))?;
                            simulator::ScenarioOutput { cycles, truth: vec![] }.into_channel_scripts()
                        }
                    };
                    rendered.insert(key.clone(), scripts);
                }
                let script = rendered[&key][i].clone();
                Box::new(ScriptedSource::new(format!("{}:{name}", sc.endpoint), script))
            }
        };
        out.push(src);
    }
    let arr: [Box<dyn ByteSource>; 3] = out.try_into().unwrap_or_else(|_| unreachable!());
    Ok((arr, scenario_cal))
}

/// Scripted sources for the three channels of a rendered scenario or capture.
pub fn scripted_sources(scripts: [Vec<Option<Vec<u8>>>; 3], label: &str) -> [Box<dyn ByteSource>; 3] {
    let [a, b, c] = scripts;
    [
        Box::new(ScriptedSource::new(format!("{label}:pms5003"), a)),
        Box::new(ScriptedSource::new(format!("{label}:dht11"), b)),
        Box::new(ScriptedSource::new(format!("{label}:mq135"), c)),
    ]
}
