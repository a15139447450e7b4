//! Line-oriented TCP query server. Requests and responses are ASCII lines
//! ending in CRLF (a bare LF is accepted on requests).
//!
//! | request           | response                                          |
//! |-------------------|---------------------------------------------------|
//! | `GET LATEST`      | one telemetry line, or `ERR not-ready`            |
//! | `GET HISTORY <k>` | up to k telemetry lines, oldest first, then blank |
//! | `GET STATS`       | `key:value` lines, then blank                     |
//! | `SUBSCRIBE`       | one telemetry line per cycle until disconnect     |
//! | `QUIT`            | connection closed                                 |
//! | anything else     | `ERR unknown-command`                             |
//!
//! A malformed `<k>` gets `ERR bad-argument`. Connections only ever read
//! published snapshots; a subscriber that stops reading loses its oldest
//! queued lines, never anyone else's.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{TelemetryError, TelemetryLine};
use crate::queue::{DropOldest, Pop};
use crate::reading::CompositeReading;

const MAX_REQUEST: usize = 256;
const POLL: Duration = Duration::from_millis(50);

pub type Feed = DropOldest<Arc<CompositeReading>>;

/// What the server reads from. Implemented by the gateway handle.
pub trait QueryBackend: Send + Sync + 'static {
    fn latest(&self) -> Option<Arc<CompositeReading>>;
    /// Up to `k` most recent readings, oldest first.
    fn history(&self, k: usize) -> Vec<Arc<CompositeReading>>;
    fn stats(&self) -> Vec<(String, u64)>;
    fn subscribers(&self) -> &SubscriberHub;
}

/// Registry of streaming subscribers, each with its own bounded queue.
#[derive(Debug)]
pub struct SubscriberHub {
    capacity: usize,
    next_id: AtomicU64,
    live: Mutex<Vec<(u64, Arc<Feed>)>>,
    /// Drops accumulated by subscribers that have since gone away.
    retired_drops: AtomicU64,
}

impl SubscriberHub {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            next_id: AtomicU64::new(1),
            live: Mutex::new(Vec::new()),
            retired_drops: AtomicU64::new(0),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Vec<(u64, Arc<Feed>)>> {
        self.live.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn subscribe(&self) -> (u64, Arc<Feed>) {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let feed = Arc::new(Feed::new(self.capacity));
        self.lock().push((id, feed.clone()));
        (id, feed)
    }

    /// Pushes to every open feed and forgets closed ones.
    pub fn publish(&self, reading: &Arc<CompositeReading>) {
        let mut live = self.lock();
        live.retain(|(_, f)| {
            if f.push(reading.clone()) {
                true
            } else {
                self.retired_drops.fetch_add(f.dropped(), Ordering::Relaxed);
                false
            }
        });
    }

    pub fn count(&self) -> usize {
        self.lock().iter().filter(|(_, f)| !f.is_closed()).count()
    }

    /// `(id, dropped)` for each live subscriber.
    pub fn drops(&self) -> Vec<(u64, u64)> {
        self.lock().iter().map(|(id, f)| (*id, f.dropped())).collect()
    }

    /// `(id, readings waiting)` for each live subscriber.
    pub fn backlog(&self) -> Vec<(u64, usize)> {
        self.lock().iter().map(|(id, f)| (*id, f.len())).collect()
    }

    pub fn total_drops(&self) -> u64 {
        self.retired_drops.load(Ordering::Relaxed) + self.lock().iter().map(|(_, f)| f.dropped()).sum::<u64>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    pub bind: String,
    pub max_connections: usize,
    /// Seconds a blocked response write may take before the connection is
    /// dropped.
    pub write_timeout_secs: u64,
    /// Kernel send buffer for subscriber sockets, in bytes. Unset keeps the
    /// system default.
    pub subscriber_send_buffer: Option<usize>,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:7878".into(),
            max_connections: 64,
            write_timeout_secs: 30,
            subscriber_send_buffer: None,
        }
    }
}

#[derive(Debug, Default)]
struct ServerCounters {
    accepted: AtomicU64,
    rejected: AtomicU64,
    active: AtomicUsize,
    requests: AtomicU64,
}

pub struct QueryServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    conns: Arc<Mutex<Vec<Conn>>>,
    counters: Arc<ServerCounters>,
}

/// A connection thread and a handle on its socket, so shutdown can unblock
/// a write stuck on a client that stopped reading.
struct Conn {
    thread: JoinHandle<()>,
    socket: TcpStream,
}

impl std::fmt::Debug for QueryServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QueryServer").field("addr", &self.addr).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Request {
    Latest,
    History(usize),
    Stats,
    Subscribe,
    Quit,
    Empty,
    BadArgument,
    Unknown,
}

fn parse_request(line: &str) -> Request {
    let words: Vec<&str> = line.split_ascii_whitespace().collect();
    match words.as_slice() {
        [] => Request::Empty,
        ["GET", "LATEST"] => Request::Latest,
        ["GET", "STATS"] => Request::Stats,
        ["GET", "HISTORY", k] if k.bytes().all(|b| b.is_ascii_digit()) => match k.parse() {
            Ok(k) => Request::History(k),
            Err(_) => Request::BadArgument,
        },
        ["GET", "HISTORY", ..] => Request::BadArgument,
        ["SUBSCRIBE"] => Request::Subscribe,
        ["QUIT"] => Request::Quit,
        _ => Request::Unknown,
    }
}

/// Renders the reply to a non-streaming request.
fn respond(req: &Request, backend: &dyn QueryBackend, counters: &ServerCounters) -> String {
    match req {
        Request::Latest => match backend.latest() {
            Some(r) => TelemetryLine::from_reading(&r).to_wire(),
            None => "ERR not-ready\r\n".into(),
        },
        Request::History(k) => {
            let mut out = String::new();
            for r in backend.history(*k) {
                out += &TelemetryLine::from_reading(&r).to_wire();
            }
            out + "\r\n"
        }
        Request::Stats => {
            let mut out = String::new();
            let server = [
                ("query.accepted", counters.accepted.load(Ordering::Relaxed)),
                ("query.rejected", counters.rejected.load(Ordering::Relaxed)),
                ("query.active", counters.active.load(Ordering::Relaxed) as u64),
                ("query.requests", counters.requests.load(Ordering::Relaxed)),
            ];
            for (k, v) in backend.stats() {
                out += &format!("{k}:{v}\r\n");
            }
            for (k, v) in server {
                out += &format!("{k}:{v}\r\n");
            }
            out + "\r\n"
        }
        Request::BadArgument => "ERR bad-argument\r\n".into(),
        Request::Unknown => "ERR unknown-command\r\n".into(),
        Request::Empty | Request::Quit | Request::Subscribe => String::new(),
    }
}

impl QueryServer {
    pub fn bind(cfg: &QueryConfig, backend: Arc<dyn QueryBackend>) -> Result<Self, TelemetryError> {
        let bind_err = |source| TelemetryError::BindFailure {
            addr: cfg.bind.clone(),
            source,
        };
        let listener = TcpListener::bind(&cfg.bind).map_err(bind_err)?;
        listener.set_nonblocking(true).map_err(bind_err)?;
        let addr = listener.local_addr().map_err(bind_err)?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns = Arc::new(Mutex::new(Vec::new()));
        let counters = Arc::new(ServerCounters::default());
        let accept = {
            let (stop, conns, counters, cfg) = (stop.clone(), conns.clone(), counters.clone(), cfg.clone());
            std::thread::Builder::new()
                .name("query-accept".into())
                .spawn(move || accept_loop(listener, cfg, backend, stop, conns, counters))
                .map_err(bind_err)?
        };
        log::info!("query server listening on {addr}");
        Ok(Self {
            addr,
            stop,
            accept: Some(accept),
            conns,
            counters,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn active_connections(&self) -> usize {
        self.counters.active.load(Ordering::Relaxed)
    }

    /// Stops accepting, closes every connection and joins the threads.
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        let conns: Vec<Conn> = std::mem::take(&mut *self.conns.lock().unwrap_or_else(|p| p.into_inner()));
        for c in &conns {
            let _ = c.socket.shutdown(Shutdown::Both);
        }
        for c in conns {
            let _ = c.thread.join();
        }
    }
}

impl Drop for QueryServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

fn accept_loop(
    listener: TcpListener,
    cfg: QueryConfig,
    backend: Arc<dyn QueryBackend>,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<Conn>>>,
    counters: Arc<ServerCounters>,
) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((mut stream, peer)) => {
                let mut conns = conns.lock().unwrap_or_else(|p| p.into_inner());
                conns.retain(|c| !c.thread.is_finished());
                if counters.active.load(Ordering::SeqCst) >= cfg.max_connections {
                    counters.rejected.fetch_add(1, Ordering::Relaxed);
                    let _ = stream.set_write_timeout(Some(POLL));
                    let _ = stream.write_all(b"ERR busy\r\n");
                    continue;
                }
                let (socket, closer) = match (stream.try_clone(), stream.try_clone()) {
                    (Ok(a), Ok(b)) => (a, b),
                    (Err(e), _) | (_, Err(e)) => {
                        log::warn!("query connection {peer}: {e}");
                        continue;
                    }
                };
                counters.accepted.fetch_add(1, Ordering::Relaxed);
                counters.active.fetch_add(1, Ordering::SeqCst);
                let (cfg, backend, stop, counters) = (cfg.clone(), backend.clone(), stop.clone(), counters.clone());
                let spawned = std::thread::Builder::new()
                    .name(format!("query-{peer}"))
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, &cfg, &*backend, &stop, &counters) {
                            log::debug!("query connection {peer}: {e}");
                        }
                        // The registry holds another handle on this socket.
                        let _ = closer.shutdown(Shutdown::Both);
                        counters.active.fetch_sub(1, Ordering::SeqCst);
                    });
                match spawned {
                    Ok(thread) => conns.push(Conn { thread, socket }),
                    Err(e) => log::warn!("cannot spawn query connection thread: {e}"),
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                log::warn!("query accept failed: {e}");
                std::thread::sleep(POLL);
            }
        }
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

fn serve_connection(
    stream: TcpStream,
    cfg: &QueryConfig,
    backend: &dyn QueryBackend,
    stop: &AtomicBool,
    counters: &ServerCounters,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    stream.set_write_timeout(Some(Duration::from_secs(cfg.write_timeout_secs.max(1))))?;
    let mut out = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => return Ok(()),
            Ok(_) if buf.ends_with(b"\n") => {}
            Ok(_) => continue,
            Err(e) if is_timeout(&e) => {
                if buf.len() > MAX_REQUEST {
                    out.write_all(b"ERR line-too-long\r\n")?;
                    return Ok(());
                }
                continue;
            }
            Err(e) => return Err(e),
        }
        if buf.len() > MAX_REQUEST + 2 {
            out.write_all(b"ERR line-too-long\r\n")?;
            return Ok(());
        }
        let line = String::from_utf8_lossy(&buf).into_owned();
        buf.clear();
        let req = parse_request(&line);
        if req != Request::Empty {
            counters.requests.fetch_add(1, Ordering::Relaxed);
        }
        match req {
            Request::Quit => {
                let _ = out.shutdown(Shutdown::Both);
                return Ok(());
            }
            Request::Subscribe => return stream_subscription(out, cfg, backend, stop),
            req => {
                let reply = respond(&req, backend, counters);
                out.write_all(reply.as_bytes())?;
            }
        }
    }
    Ok(())
}

fn stream_subscription(
    mut out: TcpStream,
    cfg: &QueryConfig,
    backend: &dyn QueryBackend,
    stop: &AtomicBool,
) -> io::Result<()> {
    if let Some(size) = cfg.subscriber_send_buffer {
        socket2::SockRef::from(&out).set_send_buffer_size(size)?;
    }
    let (id, feed) = backend.subscribers().subscribe();
    log::debug!("subscriber {id} attached");
    let result = (|| {
        while !stop.load(Ordering::SeqCst) {
            match feed.pop_timeout(POLL) {
                Pop::Item(r) => out.write_all(TelemetryLine::from_reading(&r).to_wire().as_bytes())?,
                Pop::TimedOut => {}
                Pop::Closed => break,
            }
        }
        Ok(())
    })();
    feed.close();
    log::debug!("subscriber {id} detached after {} drops", feed.dropped());
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reading::fixtures::reading_with_aqi;
    use std::io::Read;

    struct Fixed {
        readings: Mutex<Vec<Arc<CompositeReading>>>,
        hub: SubscriberHub,
    }

    impl Fixed {
        fn new(n: u64) -> Arc<Self> {
            let readings = (1..=n)
                .map(|s| Arc::new(reading_with_aqi(s, s as u16, 0, 20.0, 50.0, 0.1, s as u16)))
                .collect();
            Arc::new(Self {
                readings: Mutex::new(readings),
                hub: SubscriberHub::new(4),
            })
        }
    }

    impl QueryBackend for Fixed {
        fn latest(&self) -> Option<Arc<CompositeReading>> {
            self.readings.lock().unwrap().last().cloned()
        }
        fn history(&self, k: usize) -> Vec<Arc<CompositeReading>> {
            let r = self.readings.lock().unwrap();
            r[r.len().saturating_sub(k)..].to_vec()
        }
        fn stats(&self) -> Vec<(String, u64)> {
            vec![("cycles".into(), self.readings.lock().unwrap().len() as u64)]
        }
        fn subscribers(&self) -> &SubscriberHub {
            &self.hub
        }
    }

    fn server(backend: Arc<Fixed>) -> QueryServer {
        let cfg = QueryConfig {
            bind: "127.0.0.1:0".into(),
            ..Default::default()
        };
        QueryServer::bind(&cfg, backend).unwrap()
    }

    fn ask(addr: SocketAddr, req: &str) -> String {
        let mut s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        s.write_all(format!("{req}\r\nQUIT\r\n").as_bytes()).unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out
    }

    #[test]
    fn request_grammar() {
        assert_eq!(parse_request("GET LATEST\r\n"), Request::Latest);
        assert_eq!(parse_request("GET HISTORY 3\n"), Request::History(3));
        assert_eq!(parse_request("GET HISTORY -3"), Request::BadArgument);
        assert_eq!(parse_request("GET HISTORY +3"), Request::BadArgument);
        assert_eq!(parse_request("GET HISTORY"), Request::BadArgument);
        assert_eq!(parse_request("GET HISTORY 1 2"), Request::BadArgument);
        assert_eq!(parse_request("GET STATS"), Request::Stats);
        assert_eq!(parse_request("get latest"), Request::Unknown);
        assert_eq!(parse_request("FOO"), Request::Unknown);
        assert_eq!(parse_request("\r\n"), Request::Empty);
    }

    #[test]
    fn latest_history_stats_unknown() {
        let srv = server(Fixed::new(10));
        let a = srv.local_addr();
        assert_eq!(
            ask(a, "GET LATEST"),
            "PM2.5:10 PM10:0 T:20 H:50 CO:0.10 AQI:10 CAT:Good\r\n"
        );
        let h = ask(a, "GET HISTORY 3");
        let lines: Vec<&str> = h.split("\r\n").collect();
        assert_eq!(lines.len(), 5, "{h:?}");
        assert!(lines[0].starts_with("PM2.5:8 ") && lines[2].starts_with("PM2.5:10 "));
        assert_eq!(&lines[3..], ["", ""]);
        assert_eq!(ask(a, "GET HISTORY 0"), "\r\n");
        assert_eq!(ask(a, "GET HISTORY 50").matches("\r\n").count(), 11);
        assert_eq!(ask(a, "FOO"), "ERR unknown-command\r\n");
        assert_eq!(ask(a, "GET HISTORY x"), "ERR bad-argument\r\n");
        let stats = ask(a, "GET STATS");
        assert!(stats.starts_with("cycles:10\r\n"), "{stats}");
        assert!(stats.ends_with("\r\n\r\n"));
        srv.shutdown();
    }

    #[test]
    fn not_ready_before_first_cycle() {
        let srv = server(Fixed::new(0));
        assert_eq!(ask(srv.local_addr(), "GET LATEST"), "ERR not-ready\r\n");
        assert_eq!(ask(srv.local_addr(), "GET HISTORY 5"), "\r\n");
    }

    #[test]
    fn pipelined_requests_answer_in_order() {
        let srv = server(Fixed::new(2));
        let out = ask(srv.local_addr(), "GET LATEST\r\nBAR\r\nGET HISTORY 1");
        assert_eq!(out.matches("PM2.5:2 ").count(), 2);
        assert!(out.contains("ERR unknown-command\r\n"));
    }

    #[test]
    fn oversized_request_is_refused() {
        let srv = server(Fixed::new(1));
        let out = ask(srv.local_addr(), &"X".repeat(4 * MAX_REQUEST));
        assert_eq!(out, "ERR line-too-long\r\n");
    }

    #[test]
    fn subscriber_receives_published_lines() {
        let backend = Fixed::new(0);
        let srv = server(backend.clone());
        let mut s = TcpStream::connect(srv.local_addr()).unwrap();
        s.write_all(b"SUBSCRIBE\r\n").unwrap();
        while backend.hub.count() == 0 {
            std::thread::sleep(Duration::from_millis(5));
        }
        for seq in 1..=3 {
            backend
                .hub
                .publish(&Arc::new(reading_with_aqi(seq, seq as u16, 0, 0.0, 0.0, 0.0, 0)));
        }
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        let mut r = BufReader::new(s);
        for seq in 1..=3 {
            let mut line = String::new();
            r.read_line(&mut line).unwrap();
            assert!(line.starts_with(&format!("PM2.5:{seq} ")), "{line}");
        }
        drop(r);
        // The closed feed is pruned on a later publish.
        let t0 = std::time::Instant::now();
        while backend.hub.count() > 0 && t0.elapsed() < Duration::from_secs(5) {
            backend
                .hub
                .publish(&Arc::new(reading_with_aqi(9, 9, 0, 0.0, 0.0, 0.0, 0)));
            std::thread::sleep(Duration::from_millis(20));
        }
        assert_eq!(backend.hub.count(), 0);
        srv.shutdown();
    }

    #[test]
    fn stalled_subscriber_does_not_hold_up_shutdown() {
        let backend = Fixed::new(0);
        let cfg = QueryConfig {
            bind: "127.0.0.1:0".into(),
            subscriber_send_buffer: Some(1),
            ..Default::default()
        };
        let srv = QueryServer::bind(&cfg, backend.clone()).unwrap();
        let mut s = TcpStream::connect(srv.local_addr()).unwrap();
        s.write_all(b"SUBSCRIBE\r\n").unwrap();
        while backend.hub.count() == 0 {
            std::thread::sleep(Duration::from_millis(5));
        }
        let mut seq = 0;
        while backend.hub.total_drops() == 0 {
            seq += 1;
            backend
                .hub
                .publish(&Arc::new(reading_with_aqi(seq, 1, 0, 0.0, 0.0, 0.0, 0)));
            assert!(seq < 1_000_000, "socket buffers never filled");
        }
        // The connection thread is now stuck writing; the default write
        // timeout is far longer than this bound.
        let t0 = std::time::Instant::now();
        srv.shutdown();
        assert!(t0.elapsed() < Duration::from_secs(5), "{:?}", t0.elapsed());
        drop(s);
    }

    #[test]
    fn bind_conflict_is_reported() {
        let srv = server(Fixed::new(0));
        let cfg = QueryConfig {
            bind: srv.local_addr().to_string(),
            ..Default::default()
        };
        assert!(matches!(
            QueryServer::bind(&cfg, Fixed::new(0)),
            Err(TelemetryError::BindFailure { .. })
        ));
    }
}
