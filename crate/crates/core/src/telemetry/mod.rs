//! Line protocol for the serial link, the TCP query server and the two-line
//! display summary.
//!
//! ```text
//! PM2.5:180 PM10:108 T:29 H:62 CO:5.27 AQI:193 CAT:Unhealthy\r\n
//! ```
//!
//! Keys are fixed and always in this order. PM, T, H and AQI are integers
//! (T and H truncated toward zero), CO has exactly two decimals and CAT is a
//! single word. A reader joining mid-stream resynchronizes at the next CRLF.

pub mod lcd;
mod port;
pub mod query;

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aqi::{categorize, Category};
use crate::reading::CompositeReading;

pub use port::{PortEndpoint, TelemetryPort};

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("telemetry port closed: {0}")]
    PortClosed(#[source] io::Error),
    #[error("cannot bind query server on {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad telemetry line: {0}")]
pub struct LineParseError(pub String);

/// The displayed fields of one reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryLine {
    pub pm2_5: u32,
    pub pm10: u32,
    pub temperature: i32,
    pub humidity: u32,
    /// Hundredths of a ppm.
    pub co_centi: u64,
    pub aqi: u16,
    pub category: Category,
}

impl TelemetryLine {
    pub fn from_reading(r: &CompositeReading) -> Self {
        Self {
            pm2_5: u32::from(r.pm2_5),
            pm10: u32::from(r.pm10),
            temperature: r.temperature_display(),
            humidity: r.humidity_display(),
            co_centi: r.co_centi(),
            aqi: r.aqi.overall,
            category: r.aqi.category,
        }
    }

    pub fn co(&self) -> f64 {
        self.co_centi as f64 / 100.0
    }

    /// The line with its CRLF terminator.
    pub fn to_wire(&self) -> String {
        format!("{self}\r\n")
    }

    /// Parses one line. A trailing CRLF (or bare LF) is accepted.
    pub fn parse(line: &str) -> Result<Self, LineParseError> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let line = line.strip_suffix('\r').unwrap_or(line);
        let err = |m: String| LineParseError(m);
        let fields: Vec<&str> = line.split(' ').collect();
        const KEYS: [&str; 7] = ["PM2.5", "PM10", "T", "H", "CO", "AQI", "CAT"];
        if fields.len() != KEYS.len() {
            return Err(err(format!("expected {} fields, found {}", KEYS.len(), fields.len())));
        }
        let mut vals = [""; 7];
        for (i, (field, key)) in fields.iter().zip(KEYS).enumerate() {
            match field.split_once(':') {
                Some((k, v)) if k == key && !v.is_empty() => vals[i] = v,
                _ => return Err(err(format!("field {} should be {key}:<value>, got `{field}`", i + 1))),
            }
        }
        fn int<T: FromStr>(key: &str, v: &str) -> Result<T, LineParseError> {
            let digits = v.strip_prefix('-').unwrap_or(v);
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(LineParseError(format!("{key}: `{v}` is not an integer")));
            }
            v.parse()
                .map_err(|_| LineParseError(format!("{key}: `{v}` out of range")))
        }
        let co_centi = match vals[4].split_once('.') {
            Some((w, f)) if f.len() == 2 => {
                let (w, f): (u64, u64) = (int("CO", w)?, int("CO", f)?);
                w.checked_mul(100)
                    .and_then(|c| c.checked_add(f))
                    .ok_or_else(|| err(format!("CO: `{}` out of range", vals[4])))?
            }
            _ => return Err(err(format!("CO: `{}` must have exactly two decimals", vals[4]))),
        };
        let parsed = Self {
            pm2_5: int("PM2.5", vals[0])?,
            pm10: int("PM10", vals[1])?,
            temperature: int("T", vals[2])?,
            humidity: int("H", vals[3])?,
            co_centi,
            aqi: int("AQI", vals[5])?,
            category: vals[6].parse().map_err(err)?,
        };
        match categorize(i64::from(parsed.aqi)) {
            Ok(c) if c == parsed.category => Ok(parsed),
            _ => Err(err(format!(
                "CAT:{} does not match AQI:{}",
                parsed.category, parsed.aqi
            ))),
        }
    }
}

impl fmt::Display for TelemetryLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PM2.5:{} PM10:{} T:{} H:{} CO:{}.{:02} AQI:{} CAT:{}",
            self.pm2_5,
            self.pm10,
            self.temperature,
            self.humidity,
            self.co_centi / 100,
            self.co_centi % 100,
            self.aqi,
            self.category
        )
    }
}

impl FromStr for TelemetryLine {
    type Err = LineParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

/// Writes one line for `reading` in a single call.
pub fn emit_line<W: Write + ?Sized>(reading: &CompositeReading, port: &mut W) -> Result<(), TelemetryError> {
    let line = TelemetryLine::from_reading(reading).to_wire();
    port.write_all(line.as_bytes())
        .and_then(|_| port.flush())
        .map_err(TelemetryError::PortClosed)
}

/// Splits a byte stream into lines, discarding any partial line at the start
/// when `joined_mid_stream` is set.
pub fn parse_stream(bytes: &[u8], joined_mid_stream: bool) -> Vec<Result<TelemetryLine, LineParseError>> {
    let text = String::from_utf8_lossy(bytes);
    let mut parts: Vec<&str> = text.split("\r\n").collect();
    // The piece after the last CRLF is incomplete.
    parts.pop();
    let skip = usize::from(joined_mid_stream);
    parts.into_iter().skip(skip).map(TelemetryLine::parse).collect()
}
