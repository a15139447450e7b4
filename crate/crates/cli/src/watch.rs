use std::io::{self, BufRead, BufReader, IsTerminal, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use airq_core::telemetry::{lcd, TelemetryLine};

use crate::{fail, stop_flag, CmdResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Query server address, e.g. 127.0.0.1:7878.
    addr: String,
    /// Seconds between polls.
    #[arg(long, default_value_t = 1.0)]
    interval: f64,
    /// Poll once, print the two lines and exit (exit 2 if unreachable).
    #[arg(long, conflicts_with = "count")]
    once: bool,
    /// Stop after this many polls.
    #[arg(long, value_name = "N")]
    count: Option<u64>,
}

const IO_TIMEOUT: Duration = Duration::from_secs(2);

enum Outcome {
    Live(TelemetryLine),
    NotReady,
}

fn resolve(addr: &str) -> io::Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("{addr} did not resolve")))
}

fn connect(addr: &str) -> io::Result<BufReader<TcpStream>> {
    let s = TcpStream::connect_timeout(&resolve(addr)?, IO_TIMEOUT)?;
    s.set_read_timeout(Some(IO_TIMEOUT))?;
    s.set_write_timeout(Some(IO_TIMEOUT))?;
    Ok(BufReader::new(s))
}

fn poll(conn: &mut BufReader<TcpStream>) -> io::Result<Outcome> {
    conn.get_mut().write_all(b"GET LATEST\r\n")?;
    let mut line = String::new();
    if conn.read_line(&mut line)? == 0 {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "server closed the connection",
        ));
    }
    if line.trim_end() == "ERR not-ready" {
        return Ok(Outcome::NotReady);
    }
    TelemetryLine::parse(&line)
        .map(Outcome::Live)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

struct Screen {
    tty: bool,
    drawn: bool,
}

impl Screen {
    fn show(&mut self, lines: &[String; 2]) {
        let mut out = io::stdout().lock();
        if self.tty {
            if self.drawn {
                let _ = write!(out, "\x1b[2A");
            }
            let _ = write!(out, "\r\x1b[2K{}\n\r\x1b[2K{}\n", lines[0], lines[1]);
        } else {
            let _ = writeln!(out, "{}\n{}", lines[0], lines[1]);
        }
        let _ = out.flush();
        self.drawn = true;
    }
}

pub fn watch(args: Args) -> CmdResult {
    if !(args.interval.is_finite() && args.interval > 0.0) {
        return Err(fail(1, "--interval must be positive"));
    }
    let limit = if args.once { Some(1) } else { args.count };
    let interval = Duration::from_secs_f64(args.interval);
    let stop = stop_flag();
    let mut screen = Screen {
        tty: io::stdout().is_terminal(),
        drawn: false,
    };
    let mut conn: Option<BufReader<TcpStream>> = None;
    let mut last: Option<TelemetryLine> = None;
    let mut polls = 0u64;
    let mut reached = false;
    let mut complained = false;

    while !stop.load(Ordering::SeqCst) {
        let started = Instant::now();
        let result = match conn.as_mut() {
            Some(c) => poll(c),
            None => connect(&args.addr).and_then(|mut c| {
                let r = poll(&mut c);
                conn = Some(c);
                r
            }),
        };
        let lines = match result {
            Ok(Outcome::Live(line)) => {
                reached = true;
                complained = false;
                last = Some(line);
                lcd::render(&line, false)
            }
            Ok(Outcome::NotReady) => {
                reached = true;
                complained = false;
                lcd::render_waiting("gateway has no reading yet")
            }
            Err(e) => {
                conn = None;
                if !complained {
                    eprintln!("airq: {}: {e}; retrying", args.addr);
                    complained = true;
                }
                match &last {
                    Some(l) => lcd::render(l, true),
                    None => lcd::render_waiting(&format!("no server at {}", args.addr)),
                }
            }
        };
        screen.show(&lines);
        polls += 1;
        if limit.is_some_and(|n| polls >= n) {
            break;
        }
        while !stop.load(Ordering::SeqCst) && started.elapsed() < interval {
            std::thread::sleep((interval - started.elapsed().min(interval)).min(Duration::from_millis(50)));
        }
    }
    if args.once && !reached {
        return Err(fail(2, format!("cannot reach {}", args.addr)));
    }
    Ok(())
}
