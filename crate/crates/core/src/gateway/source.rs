//! Per-channel byte sources polled once per cycle.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, Read};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

/// What a channel delivered since the previous poll.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Poll {
    Data(Vec<u8>),
    Silent,
    /// The stream ended or failed. It may come back after `reopen`.
    Closed,
}

pub trait ByteSource: Send {
    fn describe(&self) -> String;
    fn poll_cycle(&mut self) -> Poll;
    fn reopen(&mut self) -> io::Result<()>;
    /// True once a finite source has nothing left to give.
    fn exhausted(&self) -> bool {
        false
    }
}

/// Replays a fixed per-cycle script: `None` entries are silent cycles.
#[derive(Debug, Clone)]
pub struct ScriptedSource {
    name: String,
    script: VecDeque<Option<Vec<u8>>>,
}

impl ScriptedSource {
    pub fn new(name: impl Into<String>, script: Vec<Option<Vec<u8>>>) -> Self {
        Self {
            name: name.into(),
            script: script.into(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.script.len()
    }
}

impl ByteSource for ScriptedSource {
    fn describe(&self) -> String {
        self.name.clone()
    }

    fn poll_cycle(&mut self) -> Poll {
        match self.script.pop_front() {
            Some(Some(bytes)) => Poll::Data(bytes),
            Some(None) => Poll::Silent,
            None => Poll::Closed,
        }
    }

    fn reopen(&mut self) -> io::Result<()> {
        Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            format!("{} has ended", self.name),
        ))
    }

    fn exhausted(&self) -> bool {
        self.script.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamEndpoint {
    Tcp(String),
    /// Serial device node, FIFO or plain file.
    Path(PathBuf),
}

impl StreamEndpoint {
    pub fn parse(s: &str) -> Self {
        match s.strip_prefix("tcp://") {
            Some(addr) => StreamEndpoint::Tcp(addr.to_string()),
            None => StreamEndpoint::Path(PathBuf::from(s)),
        }
    }
}

#[derive(Debug, Default)]
struct Shared {
    buf: Mutex<Vec<u8>>,
    closed: AtomicBool,
}

/// A live byte stream drained by a reader thread. Each poll hands over
/// whatever arrived since the last one.
#[derive(Debug)]
pub struct StreamSource {
    endpoint: StreamEndpoint,
    shared: Arc<Shared>,
    tcp: Option<TcpStream>,
}

const READ_CHUNK: usize = 4096;
/// Cap on octets buffered between polls; older octets are discarded first.
const MAX_PENDING: usize = 1 << 20;

impl StreamSource {
    pub fn open(endpoint: StreamEndpoint) -> io::Result<Self> {
        let mut s = Self {
            endpoint,
            shared: Arc::new(Shared::default()),
            tcp: None,
        };
        s.connect()?;
        Ok(s)
    }

    fn connect(&mut self) -> io::Result<()> {
        let shared = Arc::new(Shared::default());
        let reader: Box<dyn Read + Send> = match &self.endpoint {
            StreamEndpoint::Tcp(addr) => {
                let sa = addr
                    .to_socket_addrs()?
                    .next()
                    .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("{addr} did not resolve")))?;
                let s = TcpStream::connect_timeout(&sa, Duration::from_secs(2))?;
                self.tcp = Some(s.try_clone()?);
                Box::new(s)
            }
            StreamEndpoint::Path(p) => Box::new(File::open(p)?),
        };
        let worker = shared.clone();
        std::thread::Builder::new()
            .name(format!("source-{}", self.describe()))
            .spawn(move || pump(reader, &worker))?;
        self.shared = shared;
        Ok(())
    }
}

fn pump(mut reader: Box<dyn Read + Send>, shared: &Shared) {
    let mut chunk = [0u8; READ_CHUNK];
    loop {
        match reader.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => {
                let mut buf = shared.buf.lock().unwrap_or_else(|p| p.into_inner());
                buf.extend_from_slice(&chunk[..n]);
                if buf.len() > MAX_PENDING {
                    let excess = buf.len() - MAX_PENDING;
                    buf.drain(..excess);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(_) => break,
        }
    }
    shared.closed.store(true, Ordering::SeqCst);
}

impl ByteSource for StreamSource {
    fn describe(&self) -> String {
        match &self.endpoint {
            StreamEndpoint::Tcp(a) => format!("tcp://{a}"),
            StreamEndpoint::Path(p) => p.display().to_string(),
        }
    }

    fn poll_cycle(&mut self) -> Poll {
        // Read the flag first so octets that arrived just before the close
        // are still handed over.
        let closed = self.shared.closed.load(Ordering::SeqCst);
        let data = std::mem::take(&mut *self.shared.buf.lock().unwrap_or_else(|p| p.into_inner()));
        match (data.is_empty(), closed) {
            (false, _) => Poll::Data(data),
            (true, false) => Poll::Silent,
            (true, true) => Poll::Closed,
        }
    }

    fn reopen(&mut self) -> io::Result<()> {
        if let Some(s) = self.tcp.take() {
            let _ = s.shutdown(Shutdown::Both);
        }
        self.connect()
    }
}

impl Drop for StreamSource {
    fn drop(&mut self) {
        if let Some(s) = self.tcp.take() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}
