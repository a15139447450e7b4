//! The byte sink telemetry lines go to: a serial device (or any file), a TCP
//! peer, or stdout. A real HC-05 link runs at 9600-8-N-1; line settings of a
//! device node are left to the host (`stty`).

use std::fmt;
use std::fs::OpenOptions;
use std::io::{self, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{emit_line, TelemetryError};
use crate::reading::CompositeReading;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PortEndpoint {
    /// `tcp://host:port`
    Tcp(String),
    /// `-`
    Stdout,
    Path(PathBuf),
}

impl FromStr for PortEndpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err("empty endpoint".into());
        }
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr
                .rsplit_once(':')
                .is_none_or(|(h, p)| h.is_empty() || p.parse::<u16>().is_err())
            {
                return Err(format!("`{s}` is not tcp://host:port"));
            }
            return Ok(PortEndpoint::Tcp(addr.to_string()));
        }
        if s == "-" {
            return Ok(PortEndpoint::Stdout);
        }
        Ok(PortEndpoint::Path(PathBuf::from(s)))
    }
}

impl TryFrom<String> for PortEndpoint {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PortEndpoint> for String {
    fn from(e: PortEndpoint) -> String {
        e.to_string()
    }
}

impl fmt::Display for PortEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortEndpoint::Tcp(a) => write!(f, "tcp://{a}"),
            PortEndpoint::Stdout => f.write_str("-"),
            PortEndpoint::Path(p) => write!(f, "{}", p.display()),
        }
    }
}

impl PortEndpoint {
    pub fn connect(&self) -> io::Result<Box<dyn Write + Send>> {
        Ok(match self {
            PortEndpoint::Tcp(addr) => {
                let sa = addr
                    .to_socket_addrs()?
                    .next()
                    .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("{addr} did not resolve")))?;
                let s = TcpStream::connect_timeout(&sa, Duration::from_secs(2))?;
                s.set_nodelay(true)?;
                s.set_write_timeout(Some(Duration::from_secs(5)))?;
                Box::new(s)
            }
            PortEndpoint::Stdout => Box::new(io::stdout()),
            PortEndpoint::Path(p) => Box::new(OpenOptions::new().create(true).append(true).open(p)?),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PortStats {
    pub sent: u64,
    /// Times the port went from open to closed.
    pub closed: u64,
    /// Lines not written because the port was closed.
    pub lost: u64,
    pub reconnects: u64,
}

/// A line sink that survives its peer going away: after a failure the port
/// stays closed, dropping lines, until a reconnect attempt succeeds.
pub struct TelemetryPort {
    endpoint: PortEndpoint,
    conn: Option<Box<dyn Write + Send>>,
    retry_interval: Duration,
    next_retry: Instant,
    stats: PortStats,
}

impl fmt::Debug for TelemetryPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TelemetryPort")
            .field("endpoint", &self.endpoint)
            .field("open", &self.conn.is_some())
            .field("stats", &self.stats)
            .finish()
    }
}

impl TelemetryPort {
    /// Opens the endpoint; failing here is a startup error.
    pub fn open(endpoint: PortEndpoint, retry_interval: Duration) -> io::Result<Self> {
        let conn = endpoint.connect()?;
        Ok(Self::with_writer(endpoint, conn, retry_interval))
    }

    /// Wraps an already-open writer; reconnects go through `endpoint`.
    pub fn with_writer(endpoint: PortEndpoint, conn: Box<dyn Write + Send>, retry_interval: Duration) -> Self {
        Self {
            endpoint,
            conn: Some(conn),
            retry_interval,
            next_retry: Instant::now(),
            stats: PortStats::default(),
        }
    }

    pub fn endpoint(&self) -> &PortEndpoint {
        &self.endpoint
    }

    pub fn is_open(&self) -> bool {
        self.conn.is_some()
    }

    pub fn stats(&self) -> PortStats {
        self.stats
    }

    pub fn send(&mut self, reading: &CompositeReading) -> Result<(), TelemetryError> {
        if self.conn.is_none() {
            let now = Instant::now();
            if now < self.next_retry {
                self.stats.lost += 1;
                return Err(TelemetryError::PortClosed(io::Error::new(
                    io::ErrorKind::NotConnected,
                    "waiting to reconnect",
                )));
            }
            match self.endpoint.connect() {
                Ok(c) => {
                    self.conn = Some(c);
                    self.stats.reconnects += 1;
                }
                Err(e) => {
                    self.next_retry = now + self.retry_interval;
                    self.stats.lost += 1;
                    return Err(TelemetryError::PortClosed(e));
                }
            }
        }
        let conn = self.conn.as_mut().expect("connected above");
        match emit_line(reading, conn) {
            Ok(()) => {
                self.stats.sent += 1;
                Ok(())
            }
            Err(e) => {
                self.conn = None;
                self.next_retry = Instant::now() + self.retry_interval;
                self.stats.closed += 1;
                self.stats.lost += 1;
                Err(e)
            }
        }
    }

    pub fn flush(&mut self) -> io::Result<()> {
        match self.conn.as_mut() {
            Some(c) => c.flush(),
            None => Ok(()),
        }
    }
}
