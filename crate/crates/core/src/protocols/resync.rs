//! Frame recovery for PMS5003 byte streams.
//!
//! The scanner advances one octet past every position that does not start a
//! valid frame. Candidates with correct start characters but a bad length or
//! checksum are reported as rejections; plain garbage is only counted.

use std::io::{self, Read};

use serde::Serialize;

use super::pms5003::{self, Pms5003Error, Pms5003Frame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ResyncStats {
    pub frames: u64,
    pub bad_checksum: u64,
    pub bad_length: u64,
    /// Octets that did not end up inside a valid frame.
    pub skipped_octets: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScanEvent {
    Frame { frame: Pms5003Frame, offset: u64 },
    Rejected { error: Pms5003Error, offset: u64 },
}

/// Per-stream scanner state. One instance per input stream.
#[derive(Debug, Default)]
pub struct Pms5003Scanner {
    buf: Vec<u8>,
    pos: usize,
    /// Stream offset of `buf[0]`.
    base: u64,
    stats: ResyncStats,
}

impl Pms5003Scanner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.pos > 4096 && self.pos * 2 > self.buf.len() {
            self.buf.drain(..self.pos);
            self.base += self.pos as u64;
            self.pos = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Octets consumed so far, including skipped ones.
    pub fn consumed(&self) -> u64 {
        self.base + self.pos as u64
    }

    /// Octets held back waiting for the rest of a candidate frame.
    pub fn pending(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn stats(&self) -> ResyncStats {
        self.stats
    }

    /// Next frame or rejection from the buffered octets, or `None` when more
    /// input is needed.
    pub fn next_event(&mut self) -> Option<ScanEvent> {
        loop {
            let window = &self.buf[self.pos..];
            if window.is_empty() {
                return None;
            }
            let offset = self.consumed();
            match pms5003::decode(window) {
                Ok((frame, used)) => {
                    self.pos += used;
                    self.stats.frames += 1;
                    return Some(ScanEvent::Frame { frame, offset });
                }
                Err(Pms5003Error::Truncated { .. }) => return None,
                Err(Pms5003Error::BadSync) => self.skip(),
                Err(error) => {
                    match error {
                        Pms5003Error::BadLength(_) => self.stats.bad_length += 1,
                        _ => self.stats.bad_checksum += 1,
                    }
                    self.skip();
                    return Some(ScanEvent::Rejected { error, offset });
                }
            }
        }
    }

    /// Next valid frame, passing over rejections.
    pub fn next_frame(&mut self) -> Option<Pms5003Frame> {
        while let Some(ev) = self.next_event() {
            if let ScanEvent::Frame { frame, .. } = ev {
                return Some(frame);
            }
        }
        None
    }

    /// Declares end of stream: any held-back partial candidate is skipped.
    pub fn finish(&mut self) -> ResyncStats {
        let rest = self.pending();
        self.stats.skipped_octets += rest as u64;
        self.pos = self.buf.len();
        self.stats
    }

    fn skip(&mut self) {
        self.pos += 1;
        self.stats.skipped_octets += 1;
    }
}

/// Recovers every valid frame from a complete byte sequence.
pub fn resync(stream: &[u8]) -> (Vec<Pms5003Frame>, ResyncStats) {
    let mut scanner = Pms5003Scanner::new();
    scanner.push(stream);
    let frames = std::iter::from_fn(|| scanner.next_frame()).collect();
    (frames, scanner.finish())
}

/// Frames recovered from an unbounded reader.
pub struct ResyncReader<R> {
    inner: R,
    scanner: Pms5003Scanner,
    done: bool,
}

impl<R: Read> ResyncReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            scanner: Pms5003Scanner::new(),
            done: false,
        }
    }

    pub fn stats(&self) -> ResyncStats {
        self.scanner.stats()
    }
}

impl<R: Read> Iterator for ResyncReader<R> {
    type Item = io::Result<Pms5003Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut chunk = [0u8; 256];
        loop {
            if let Some(f) = self.scanner.next_frame() {
                return Some(Ok(f));
            }
            if self.done {
                return None;
            }
            match self.inner.read(&mut chunk) {
                Ok(0) => {
                    self.scanner.finish();
                    self.done = true;
                }
                Ok(n) => self.scanner.push(&chunk[..n]),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}
