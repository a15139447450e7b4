//! Capture file format for raw sensor traffic.
//!
//! A capture is a sequence of records, each
//!
//! ```text
//! kind     1 octet   0x00 cycle marker, 0x01 PMS5003, 0x02 DHT11, 0x03 MQ135 ADC
//! length   4 octets  payload length, big-endian u32
//! payload  length octets, exactly as read from the sensor channel
//! ```
//!
//! A cycle marker (always zero-length) closes one sampling cycle. Channel
//! records between two markers are what that channel delivered during the
//! cycle; a channel with no record was silent. Trailing records without a
//! final marker form a last, unterminated cycle.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::SensorKind;

pub const KIND_CYCLE: u8 = 0x00;
const HEADER_LEN: usize = 5;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("malformed dump at offset {offset}: {reason}")]
    MalformedDump { offset: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Cycle,
    Channel(SensorKind),
}

impl RecordKind {
    pub fn code(self) -> u8 {
        match self {
            RecordKind::Cycle => KIND_CYCLE,
            RecordKind::Channel(k) => k.code(),
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        if code == KIND_CYCLE {
            Some(RecordKind::Cycle)
        } else {
            SensorKind::from_code(code).map(RecordKind::Channel)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub kind: RecordKind,
    pub payload: Vec<u8>,
}

impl Record {
    pub fn cycle() -> Self {
        Self {
            kind: RecordKind::Cycle,
            payload: Vec::new(),
        }
    }

    pub fn channel(kind: SensorKind, payload: impl Into<Vec<u8>>) -> Self {
        Self {
            kind: RecordKind::Channel(kind),
            payload: payload.into(),
        }
    }
}

pub fn write_record<W: Write>(out: &mut W, record: &Record) -> io::Result<()> {
    let len = u32::try_from(record.payload.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "payload exceeds 4 GiB"))?;
    let mut header = [0u8; HEADER_LEN];
    header[0] = record.kind.code();
    header[1..].copy_from_slice(&len.to_be_bytes());
    out.write_all(&header)?;
    out.write_all(&record.payload)
}

pub fn encode_records(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        write_record(&mut out, r).expect("writing to a Vec cannot fail");
    }
    out
}

/// Parses a whole capture held in memory.
pub fn parse_records(bytes: &[u8]) -> Result<Vec<Record>, DumpError> {
    let mut records = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let at = offset as u64;
        let header = bytes
            .get(offset..offset + HEADER_LEN)
            .ok_or_else(|| DumpError::MalformedDump {
                offset: at,
                reason: format!("record header needs 5 octets, {} left", bytes.len() - offset),
            })?;
        let kind = RecordKind::from_code(header[0]).ok_or_else(|| DumpError::MalformedDump {
            offset: at,
            reason: format!("unknown record kind {:#04x}", header[0]),
        })?;
        let len = u32::from_be_bytes([header[1], header[2], header[3], header[4]]) as usize;
        if kind == RecordKind::Cycle && len != 0 {
            return Err(DumpError::MalformedDump {
                offset: at,
                reason: format!("cycle marker with {len}-octet payload"),
            });
        }
        let start = offset + HEADER_LEN;
        let payload = bytes
            .get(start..start.saturating_add(len))
            .ok_or_else(|| DumpError::MalformedDump {
                offset: at,
                reason: format!("payload of {len} octets runs past end of file"),
            })?;
        records.push(Record {
            kind,
            payload: payload.to_vec(),
        });
        offset = start + len;
    }
    Ok(records)
}

pub fn read_records<R: Read>(mut input: R) -> Result<Vec<Record>, DumpError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse_records(&bytes)
}

/// What each channel delivered during one cycle. `None` means silence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CycleChunks {
    pub pms5003: Option<Vec<u8>>,
    pub dht11: Option<Vec<u8>>,
    pub adc: Option<Vec<u8>>,
}

impl CycleChunks {
    pub fn get(&self, kind: SensorKind) -> Option<&[u8]> {
        match kind {
            SensorKind::Pms5003 => self.pms5003.as_deref(),
            SensorKind::Dht11 => self.dht11.as_deref(),
            SensorKind::Adc => self.adc.as_deref(),
        }
    }

    fn slot(&mut self, kind: SensorKind) -> &mut Option<Vec<u8>> {
        match kind {
            SensorKind::Pms5003 => &mut self.pms5003,
            SensorKind::Dht11 => &mut self.dht11,
            SensorKind::Adc => &mut self.adc,
        }
    }

    /// Appends to the channel's chunk for this cycle.
    pub fn append(&mut self, kind: SensorKind, bytes: &[u8]) {
        self.slot(kind).get_or_insert_with(Vec::new).extend_from_slice(bytes);
    }

    pub fn take(&mut self, kind: SensorKind) -> Option<Vec<u8>> {
        self.slot(kind).take()
    }
}

/// Groups records into cycles.
pub fn records_to_cycles(records: &[Record]) -> Vec<CycleChunks> {
    let mut cycles = Vec::new();
    let mut current = CycleChunks::default();
    let mut open = false;
    for r in records {
        match r.kind {
            RecordKind::Cycle => {
                cycles.push(std::mem::take(&mut current));
                open = false;
            }
            RecordKind::Channel(k) => {
                current.append(k, &r.payload);
                open = true;
            }
        }
    }
    if open {
        cycles.push(current);
    }
    cycles
}

pub fn cycles_to_records(cycles: &[CycleChunks]) -> Vec<Record> {
    let mut out = Vec::new();
    for c in cycles {
        for kind in SensorKind::ALL {
            if let Some(bytes) = c.get(kind) {
                out.push(Record::channel(kind, bytes));
            }
        }
        out.push(Record::cycle());
    }
    out
}
