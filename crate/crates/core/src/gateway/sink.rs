//! Output sinks. Each runs on its own thread behind a drop-oldest queue, so a
//! slow or failing sink never holds up sampling.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Serialize;

use crate::queue::DropOldest;
use crate::reading::CompositeReading;
use crate::storage::{CsvLog, Measurement};
use crate::telemetry::{lcd, TelemetryLine, TelemetryPort};

pub trait Sink: Send {
    fn name(&self) -> &'static str;
    fn deliver(&mut self, reading: &CompositeReading) -> Result<(), String>;
    /// Called once after the last delivery.
    fn close(&mut self) -> Result<(), String> {
        Ok(())
    }
}

pub struct CsvSink {
    log: CsvLog,
}

impl CsvSink {
    pub fn new(log: CsvLog) -> Self {
        Self { log }
    }
}

impl Sink for CsvSink {
    fn name(&self) -> &'static str {
        "csv"
    }

    fn deliver(&mut self, r: &CompositeReading) -> Result<(), String> {
        self.log
            .append(Measurement::from_reading(r))
            .map(drop)
            .map_err(|e| e.to_string())
    }

    fn close(&mut self) -> Result<(), String> {
        self.log.flush().map_err(|e| e.to_string())
    }
}

pub struct TelemetrySink {
    port: TelemetryPort,
}

impl TelemetrySink {
    pub fn new(port: TelemetryPort) -> Self {
        Self { port }
    }
}

impl Sink for TelemetrySink {
    fn name(&self) -> &'static str {
        "telemetry"
    }

    fn deliver(&mut self, r: &CompositeReading) -> Result<(), String> {
        self.port.send(r).map_err(|e| e.to_string())
    }

    fn close(&mut self) -> Result<(), String> {
        self.port.flush().map_err(|e| e.to_string())
    }
}

type Render = Box<dyn FnMut(&[String; 2]) + Send>;

/// Renders the two-line summary for every reading.
pub struct LiveViewSink {
    render: Render,
}

impl LiveViewSink {
    pub fn new(render: impl FnMut(&[String; 2]) + Send + 'static) -> Self {
        Self {
            render: Box::new(render),
        }
    }

    /// Redraws two lines in place on stderr.
    pub fn terminal() -> Self {
        let mut drawn = false;
        Self::new(move |lines| {
            use std::io::Write;
            let mut e = std::io::stderr().lock();
            if drawn {
                let _ = write!(e, "\x1b[2A");
            }
            let _ = write!(e, "\r\x1b[2K{}\n\r\x1b[2K{}\n", lines[0], lines[1]);
            drawn = true;
        })
    }
}

impl Sink for LiveViewSink {
    fn name(&self) -> &'static str {
        "live-view"
    }

    fn deliver(&mut self, r: &CompositeReading) -> Result<(), String> {
        (self.render)(&lcd::render(&TelemetryLine::from_reading(r), r.stale.any()));
        Ok(())
    }
}

#[derive(Debug, Default)]
struct Counters {
    delivered: AtomicU64,
    failed: AtomicU64,
    lost: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SinkStats {
    pub delivered: u64,
    /// Evicted from the queue before the sink got to them.
    pub dropped: u64,
    /// Deliveries that failed at least once.
    pub failed: u64,
    /// Deliveries that also failed their retry.
    pub lost: u64,
    pub queued: u64,
}

/// Read-only view of a running sink's counters.
#[derive(Debug, Clone)]
pub struct SinkProbe {
    name: &'static str,
    queue: Arc<DropOldest<Arc<CompositeReading>>>,
    counters: Arc<Counters>,
}

impl SinkProbe {
    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn stats(&self) -> SinkStats {
        SinkStats {
            delivered: self.counters.delivered.load(Ordering::Relaxed),
            dropped: self.queue.dropped(),
            failed: self.counters.failed.load(Ordering::Relaxed),
            lost: self.counters.lost.load(Ordering::Relaxed),
            queued: self.queue.len() as u64,
        }
    }
}

pub struct SinkRunner {
    probe: SinkProbe,
    thread: Option<JoinHandle<Result<(), String>>>,
}

impl std::fmt::Debug for SinkRunner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SinkRunner").field("name", &self.probe.name).finish()
    }
}

impl SinkRunner {
    pub fn spawn(mut sink: Box<dyn Sink>, capacity: usize) -> std::io::Result<Self> {
        let name = sink.name();
        let queue: Arc<DropOldest<Arc<CompositeReading>>> = Arc::new(DropOldest::new(capacity));
        let counters = Arc::new(Counters::default());
        let thread = {
            let (queue, counters) = (queue.clone(), counters.clone());
            std::thread::Builder::new()
                .name(format!("sink-{name}"))
                .spawn(move || {
                    while let Some(r) = queue.pop() {
                        if let Err(e) = sink.deliver(&r) {
                            counters.failed.fetch_add(1, Ordering::Relaxed);
                            log::warn!("sink {name}: seq {}: {e}; retrying", r.seq);
                            if let Err(e) = sink.deliver(&r) {
                                counters.lost.fetch_add(1, Ordering::Relaxed);
                                log::warn!("sink {name}: seq {} lost: {e}", r.seq);
                                continue;
                            }
                        }
                        counters.delivered.fetch_add(1, Ordering::Relaxed);
                    }
                    sink.close()
                })?
        };
        Ok(Self {
            probe: SinkProbe { name, queue, counters },
            thread: Some(thread),
        })
    }

    pub fn name(&self) -> &'static str {
        self.probe.name
    }

    pub fn probe(&self) -> SinkProbe {
        self.probe.clone()
    }

    /// Never blocks beyond a queue lock.
    pub fn offer(&self, r: &Arc<CompositeReading>) {
        self.probe.queue.push(r.clone());
    }

    pub fn stats(&self) -> SinkStats {
        self.probe.stats()
    }

    /// Lets the sink drain its queue, then closes it.
    pub fn finish(&mut self) -> Result<(), String> {
        self.probe.queue.close();
        match self.thread.take() {
            Some(h) => h.join().map_err(|_| format!("sink {} panicked", self.probe.name))?,
            None => Ok(()),
        }
    }
}

impl Drop for SinkRunner {
    fn drop(&mut self) {
        let _ = self.finish();
    }
}
