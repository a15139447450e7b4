//! Plantower PMS5003 32-octet data frame.
//!
//! ```text
//! offset  size  field
//!      0     2  start characters 0x42 0x4D
//!      2     2  frame length, big-endian, always 28 (2 * 13 data words + 2)
//!      4    26  13 big-endian data words (see `Pms5003Frame`, in field order)
//!     30     2  checksum: 16-bit sum of octets 0..30, big-endian
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{self, Exec};

pub const FRAME_LEN: usize = 32;
pub const START: [u8; 2] = [0x42, 0x4D];
pub const LENGTH_FIELD: u16 = 28;
const DATA_WORDS: usize = 13;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum Pms5003Error {
    #[error("missing start characters 0x42 0x4D")]
    BadSync,
    #[error("frame length field is {0}, expected 28")]
    BadLength(u16),
    #[error("checksum mismatch: frame says {expected:#06x}, computed {computed:#06x}")]
    BadChecksum { expected: u16, computed: u16 },
    #[error("only {available} of 32 octets available")]
    Truncated { available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct Pms5003Frame {
    pub pm1_0_cf1: u16,
    pub pm2_5_cf1: u16,
    pub pm10_cf1: u16,
    pub pm1_0_atm: u16,
    pub pm2_5_atm: u16,
    pub pm10_atm: u16,
    /// Particles per 0.1 L with diameter beyond 0.3 um, and so on upward.
    pub counts_0_3um: u16,
    pub counts_0_5um: u16,
    pub counts_1_0um: u16,
    pub counts_2_5um: u16,
    pub counts_5_0um: u16,
    pub counts_10um: u16,
    pub reserved: u16,
}

/// Which PM word set feeds the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PmWordSet {
    /// Atmospheric-environment values, for outdoor use.
    #[default]
    Atm,
    /// Factory CF=1 values.
    Cf1,
}

impl Pms5003Frame {
    /// Frame carrying the given atmospheric PM2.5/PM10 values with the
    /// CF=1 set mirrored and all counts zero.
    pub fn with_pm(pm2_5: u16, pm10: u16) -> Self {
        Self {
            pm2_5_cf1: pm2_5,
            pm10_cf1: pm10,
            pm2_5_atm: pm2_5,
            pm10_atm: pm10,
            ..Self::default()
        }
    }

    fn words(&self) -> [u16; DATA_WORDS] {
        [
            self.pm1_0_cf1,
            self.pm2_5_cf1,
            self.pm10_cf1,
            self.pm1_0_atm,
            self.pm2_5_atm,
            self.pm10_atm,
            self.counts_0_3um,
            self.counts_0_5um,
            self.counts_1_0um,
            self.counts_2_5um,
            self.counts_5_0um,
            self.counts_10um,
            self.reserved,
        ]
    }

    fn from_words(w: [u16; DATA_WORDS]) -> Self {
        Self {
            pm1_0_cf1: w[0],
            pm2_5_cf1: w[1],
            pm10_cf1: w[2],
            pm1_0_atm: w[3],
            pm2_5_atm: w[4],
            pm10_atm: w[5],
            counts_0_3um: w[6],
            counts_0_5um: w[7],
            counts_1_0um: w[8],
            counts_2_5um: w[9],
            counts_5_0um: w[10],
            counts_10um: w[11],
            reserved: w[12],
        }
    }

    pub fn pm2_5(&self, set: PmWordSet) -> u16 {
        match set {
            PmWordSet::Atm => self.pm2_5_atm,
            PmWordSet::Cf1 => self.pm2_5_cf1,
        }
    }

    pub fn pm10(&self, set: PmWordSet) -> u16 {
        match set {
            PmWordSet::Atm => self.pm10_atm,
            PmWordSet::Cf1 => self.pm10_cf1,
        }
    }

    /// Whether the particle counts are non-increasing with size. Real sensors
    /// satisfy this; the decoder reports rather than rejects violations.
    pub fn counts_monotone(&self) -> bool {
        let c = [
            self.counts_0_3um,
            self.counts_0_5um,
            self.counts_1_0um,
            self.counts_2_5um,
            self.counts_5_0um,
            self.counts_10um,
        ];
        c.windows(2).all(|w| w[0] >= w[1])
    }
}

fn checksum(octets: &[u8]) -> u16 {
    octets.iter().fold(0u16, |acc, &b| acc.wrapping_add(u16::from(b)))
}

pub fn encode(frame: &Pms5003Frame) -> [u8; FRAME_LEN] {
    let mut out = [0u8; FRAME_LEN];
    out[..2].copy_from_slice(&START);
    out[2..4].copy_from_slice(&LENGTH_FIELD.to_be_bytes());
    for (i, w) in frame.words().iter().enumerate() {
        out[4 + 2 * i..6 + 2 * i].copy_from_slice(&w.to_be_bytes());
    }
    let sum = checksum(&out[..30]);
    out[30..].copy_from_slice(&sum.to_be_bytes());
    out
}

/// Decodes the frame at the start of `window`.
///
/// Sync and length are checked as soon as their octets are present, so a
/// scanner can discard garbage without waiting for a full frame. Never looks
/// past octet 32.
pub fn decode(window: &[u8]) -> Result<(Pms5003Frame, usize), Pms5003Error> {
    for (i, &expected) in START.iter().enumerate() {
        match window.get(i) {
            Some(&b) if b != expected => return Err(Pms5003Error::BadSync),
            None => {
                return Err(Pms5003Error::Truncated {
                    available: window.len(),
                })
            }
            _ => {}
        }
    }
    if window.len() >= 4 {
        let len = u16::from_be_bytes([window[2], window[3]]);
        if len != LENGTH_FIELD {
            return Err(Pms5003Error::BadLength(len));
        }
    }
    if window.len() < FRAME_LEN {
        return Err(Pms5003Error::Truncated {
            available: window.len(),
        });
    }
    let frame = &window[..FRAME_LEN];
    let expected = u16::from_be_bytes([frame[30], frame[31]]);
    let computed = checksum(&frame[..30]);
    if expected != computed {
        return Err(Pms5003Error::BadChecksum { expected, computed });
    }
    let mut words = [0u16; DATA_WORDS];
    for (i, w) in words.iter_mut().enumerate() {
        *w = u16::from_be_bytes([frame[4 + 2 * i], frame[5 + 2 * i]]);
    }
    Ok((Pms5003Frame::from_words(words), FRAME_LEN))
}

/// Decodes many independent 32-octet frames.
pub fn decode_batch(frames: &[[u8; FRAME_LEN]], exec: Exec) -> Vec<Result<Pms5003Frame, Pms5003Error>> {
    batch::map(exec, frames, |f| decode(f).map(|(frame, _)| frame))
}

pub fn encode_batch(frames: &[Pms5003Frame], exec: Exec) -> Vec<[u8; FRAME_LEN]> {
    batch::map(exec, frames, encode)
}
