//! One sampling cycle's worth of station output.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::aqi::{AqiError, AqiResult, AqiTables, OffScale, Sample};
use crate::protocols::SensorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamp {
    pub wall: DateTime<Utc>,
    /// Milliseconds since the gateway started, from the monotonic clock.
    pub mono_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    /// Nothing arrived this cycle.
    Silent,
    BadChecksum,
    BadLength,
    /// Fewer octets than a full frame, or a dangling partial sample.
    Truncated,
    /// The stream closed or errored; the gateway will try to reopen it.
    SourceLost,
    /// ADC count at a rail.
    Saturated,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::Silent => "silent",
            FaultKind::BadChecksum => "bad-checksum",
            FaultKind::BadLength => "bad-length",
            FaultKind::Truncated => "truncated",
            FaultKind::SourceLost => "source-lost",
            FaultKind::Saturated => "saturated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorFault {
    pub sensor: SensorKind,
    pub kind: FaultKind,
}

/// Which channels contributed a carried-over value instead of a fresh one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Staleness {
    pub pms5003: bool,
    pub dht11: bool,
    pub mq135: bool,
}

impl Staleness {
    pub fn get(&self, kind: SensorKind) -> bool {
        match kind {
            SensorKind::Pms5003 => self.pms5003,
            SensorKind::Dht11 => self.dht11,
            SensorKind::Adc => self.mq135,
        }
    }

    pub fn set(&mut self, kind: SensorKind, stale: bool) {
        match kind {
            SensorKind::Pms5003 => self.pms5003 = stale,
            SensorKind::Dht11 => self.dht11 = stale,
            SensorKind::Adc => self.mq135 = stale,
        }
    }

    pub fn any(&self) -> bool {
        self.pms5003 || self.dht11 || self.mq135
    }

    pub fn all(&self) -> bool {
        self.pms5003 && self.dht11 && self.mq135
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeReading {
    pub seq: u64,
    pub timestamp: Timestamp,
    /// ug/m3
    pub pm2_5: u16,
    /// ug/m3
    pub pm10: u16,
    /// degrees C, tenths resolution
    pub temperature: f64,
    /// %RH, tenths resolution
    pub humidity: f64,
    /// ppm, hundredths resolution
    pub co: f64,
    pub aqi: AqiResult,
    pub faults: Vec<SensorFault>,
    pub stale: Staleness,
}

impl CompositeReading {
    pub fn sample(&self) -> Sample {
        Sample::full(f64::from(self.pm2_5), f64::from(self.pm10), self.co)
    }

    /// Recomputes the index from the stored concentrations.
    pub fn recompute_aqi(&self, tables: &AqiTables, off_scale: OffScale) -> Result<AqiResult, AqiError> {
        tables.evaluate(&self.sample(), off_scale)
    }

    /// Temperature as shown on displays and in the log: whole degrees,
    /// truncated toward zero.
    pub fn temperature_display(&self) -> i32 {
        self.temperature.trunc() as i32
    }

    pub fn humidity_display(&self) -> u32 {
        self.humidity.max(0.0).trunc() as u32
    }

    /// CO in hundredths of a ppm.
    pub fn co_centi(&self) -> u64 {
        centi(self.co)
    }
}

pub(crate) fn centi(v: f64) -> u64 {
    (v.max(0.0) * 100.0).round() as u64
}

/// Formats a value with exactly two decimals, rounding half away from zero
/// on the hundredths.
pub fn format_centi(v: f64) -> String {
    let c = centi(v);
    format!("{}.{:02}", c / 100, c % 100)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_decimal_formatting() {
        assert_eq!(format_centi(5.27), "5.27");
        assert_eq!(format_centi(3.3), "3.30");
        assert_eq!(format_centi(0.0), "0.00");
        assert_eq!(format_centi(5.6806), "5.68");
        assert_eq!(format_centi(12.999), "13.00");
    }

    #[test]
    fn display_truncation() {
        let mut r = fixtures::reading_with_aqi(1, 0, 0, 29.9, 61.9, 1.0, 0);
        assert_eq!((r.temperature_display(), r.humidity_display()), (29, 61));
        r.temperature = 0.4;
        assert_eq!(r.temperature_display(), 0);
    }

    #[test]
    fn staleness_flags() {
        let mut s = Staleness::default();
        assert!(!s.any());
        for k in SensorKind::ALL {
            s.set(k, true);
            assert!(s.get(k));
        }
        assert!(s.all());
    }
}
