//! Sensor wire formats.

pub mod adc;
pub mod dht11;
pub mod dump;
pub mod pms5003;
pub mod resync;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dht11::{Dht11Error, Dht11Frame};
pub use pms5003::{PmWordSet, Pms5003Error, Pms5003Frame};
pub use resync::{resync, Pms5003Scanner, ResyncReader, ResyncStats, ScanEvent};

/// Physical channel a byte stream comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Pms5003,
    Dht11,
    /// MQ135 analog channel, one count per sample.
    #[serde(rename = "mq135")]
    Adc,
}

impl SensorKind {
    pub const ALL: [SensorKind; 3] = [SensorKind::Pms5003, SensorKind::Dht11, SensorKind::Adc];

    pub fn code(self) -> u8 {
        match self {
            SensorKind::Pms5003 => 0x01,
            SensorKind::Dht11 => 0x02,
            SensorKind::Adc => 0x03,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Pms5003 => "pms5003",
            SensorKind::Dht11 => "dht11",
            SensorKind::Adc => "mq135",
        }
    }

    pub fn frame_len(self) -> usize {
        match self {
            SensorKind::Pms5003 => pms5003::FRAME_LEN,
            SensorKind::Dht11 => dht11::FRAME_LEN,
            SensorKind::Adc => adc::SAMPLE_LEN,
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{kind} frame must be {expected} octets{}, got {got}", if *.kind == SensorKind::Pms5003 { " starting 0x42 0x4D" } else { "" })]
pub struct FrameShapeError {
    pub kind: SensorKind,
    pub expected: usize,
    pub got: usize,
}

/// Raw octets of one frame whose outer shape has been checked, before the
/// payload is decoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorFrame {
    kind: SensorKind,
    bytes: Vec<u8>,
    received_at: Instant,
}

impl SensorFrame {
    pub fn new(kind: SensorKind, bytes: Vec<u8>, received_at: Instant) -> Result<Self, FrameShapeError> {
        let expected = kind.frame_len();
        let shape_ok = bytes.len() == expected && (kind != SensorKind::Pms5003 || bytes.starts_with(&pms5003::START));
        if !shape_ok {
            return Err(FrameShapeError {
                kind,
                expected,
                got: bytes.len(),
            });
        }
        Ok(Self {
            kind,
            bytes,
            received_at,
        })
    }

    pub fn kind(&self) -> SensorKind {
        self.kind
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn received_at(&self) -> Instant {
        self.received_at
    }
}
