//! Air Quality Index computation.
//!
//! Each pollutant concentration is truncated to its table's precision, mapped
//! to a sub-index by linear interpolation inside the breakpoint row that
//! contains it, and the overall index is the largest sub-index.
//!
//! Concentrations and breakpoints are held as scaled integers (value times
//! `10^precision`), so interpolation and half-up rounding are exact.

mod table;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{self, Exec};

pub use table::{load_breakpoint_table, AqiTables, RawTables, DEFAULT_BREAKPOINTS};

/// Highest index on the scale.
pub const AQI_MAX: u16 = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AqiError {
    #[error("{pollutant} concentration {value} is above the top breakpoint {limit}")]
    OutOfRange {
        pollutant: Pollutant,
        value: f64,
        limit: f64,
    },
    #[error("{pollutant} concentration {value} is below the first breakpoint {limit}")]
    BelowRange {
        pollutant: Pollutant,
        value: f64,
        limit: f64,
    },
    #[error("{0} concentration must be a finite non-negative number")]
    InvalidConcentration(Pollutant),
    #[error("breakpoint table for {0} has no rows")]
    NoTable(Pollutant),
    #[error("concentration is {got} but the table is for {table}")]
    PollutantMismatch { table: Pollutant, got: Pollutant },
    #[error("{pollutant} concentration has {got} decimal places, table expects {expected}")]
    PrecisionMismatch {
        pollutant: Pollutant,
        expected: u8,
        got: u8,
    },
    #[error("no sub-indices supplied")]
    EmptyInput,
    #[error("index {0} is outside 0..=500")]
    IndexOutOfRange(i64),
    #[error("malformed breakpoint config: {0}")]
    MalformedConfig(String),
    #[error("{pollutant} row {row}: {detail}")]
    NonContiguousRows {
        pollutant: Pollutant,
        row: usize,
        detail: String,
    },
}

/// Pollutants that contribute a sub-index. Declaration order is the
/// dominant-pollutant tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pollutant {
    #[serde(rename = "pm2.5")]
    Pm2_5,
    #[serde(rename = "pm10")]
    Pm10,
    #[serde(rename = "co")]
    Co,
}

impl Pollutant {
    pub const ALL: [Pollutant; 3] = [Pollutant::Pm2_5, Pollutant::Pm10, Pollutant::Co];

    pub fn as_str(self) -> &'static str {
        match self {
            Pollutant::Pm2_5 => "pm2.5",
            Pollutant::Pm10 => "pm10",
            Pollutant::Co => "co",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Pollutant::Pm2_5 | Pollutant::Pm10 => "ug/m3",
            Pollutant::Co => "ppm",
        }
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pollutant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pm2.5" | "pm2_5" | "pm25" => Ok(Pollutant::Pm2_5),
            "pm10" => Ok(Pollutant::Pm10),
            "co" => Ok(Pollutant::Co),
            other => Err(format!("unknown pollutant `{other}` (expected pm2.5, pm10 or co)")),
        }
    }
}

fn pow10(precision: u8) -> u64 {
    10u64.pow(u32::from(precision))
}

/// A concentration already truncated to a fixed number of decimal places.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PollutantConcentration {
    pollutant: Pollutant,
    /// value * 10^precision
    scaled: u64,
    precision: u8,
}

impl PollutantConcentration {
    /// Truncates `value` to `precision` decimal places.
    ///
    /// A relative slack of 1e-9 absorbs binary representation error, so that
    /// 5.6 at one decimal is 56 tenths and not 55.
    pub fn truncated(pollutant: Pollutant, value: f64, precision: u8) -> Result<Self, AqiError> {
        if !value.is_finite() || value < 0.0 {
            return Err(AqiError::InvalidConcentration(pollutant));
        }
        let raw = value * pow10(precision) as f64;
        let scaled = (raw + raw.max(1.0) * 1e-9).floor();
        if scaled > u64::MAX as f64 / 4.0 {
            return Err(AqiError::InvalidConcentration(pollutant));
        }
        Ok(Self {
            pollutant,
            scaled: scaled as u64,
            precision,
        })
    }

    pub fn from_scaled(pollutant: Pollutant, scaled: u64, precision: u8) -> Self {
        Self {
            pollutant,
            scaled,
            precision,
        }
    }

    pub fn pollutant(&self) -> Pollutant {
        self.pollutant
    }

    pub fn scaled(&self) -> u64 {
        self.scaled
    }

    pub fn precision(&self) -> u8 {
        self.precision
    }

    pub fn value(&self) -> f64 {
        self.scaled as f64 / pow10(self.precision) as f64
    }
}

impl fmt::Display for PollutantConcentration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.*}", usize::from(self.precision), self.value())
    }
}

/// One linear segment of a breakpoint table, concentrations in scaled units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BreakpointRow {
    pub c_low: u64,
    pub c_high: u64,
    pub i_low: u16,
    pub i_high: u16,
}

impl BreakpointRow {
    pub fn contains(&self, scaled: u64) -> bool {
        self.c_low <= scaled && scaled <= self.c_high
    }

    /// Linear interpolation rounded half-up, in integer arithmetic.
    fn interpolate(&self, scaled: u64) -> u16 {
        let span_c = u128::from(self.c_high - self.c_low);
        if span_c == 0 {
            return self.i_low;
        }
        let span_i = u128::from(self.i_high - self.i_low);
        let num = span_i * u128::from(scaled - self.c_low);
        let rounded = (2 * num + span_c) / (2 * span_c);
        self.i_low + rounded as u16
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BreakpointTable {
    pollutant: Pollutant,
    precision: u8,
    rows: Vec<BreakpointRow>,
}

impl BreakpointTable {
    /// Builds a table after checking ordering and contiguity. An empty row
    /// list is accepted here; lookups on it fail with [`AqiError::NoTable`].
    pub fn new(pollutant: Pollutant, precision: u8, rows: Vec<BreakpointRow>) -> Result<Self, AqiError> {
        if precision > 6 {
            return Err(AqiError::MalformedConfig(format!(
                "{pollutant}: precision {precision} exceeds 6"
            )));
        }
        for (k, row) in rows.iter().enumerate() {
            if row.c_high <= row.c_low || row.i_high <= row.i_low {
                return Err(AqiError::MalformedConfig(format!(
                    "{pollutant} row {k}: bounds must satisfy c_low < c_high and i_low < i_high"
                )));
            }
        }
        for (k, pair) in rows.windows(2).enumerate() {
            let (prev, next) = (pair[0], pair[1]);
            if next.c_low != prev.c_high + 1 {
                return Err(AqiError::NonContiguousRows {
                    pollutant,
                    row: k + 1,
                    detail: format!(
                        "concentration {} does not follow {} by one unit",
                        scaled_str(next.c_low, precision),
                        scaled_str(prev.c_high, precision)
                    ),
                });
            }
            if next.i_low != prev.i_high + 1 {
                return Err(AqiError::NonContiguousRows {
                    pollutant,
                    row: k + 1,
                    detail: format!("index {} does not follow {}", next.i_low, prev.i_high),
                });
            }
        }
        Ok(Self {
            pollutant,
            precision,
            rows,
        })
    }

    pub fn pollutant(&self) -> Pollutant {
        self.pollutant
    }

    pub fn precision(&self) -> u8 {
        self.precision
    }

    pub fn rows(&self) -> &[BreakpointRow] {
        &self.rows
    }

    /// Converts a scaled bound back to its decimal value.
    pub fn decimal(&self, scaled: u64) -> f64 {
        scaled as f64 / pow10(self.precision) as f64
    }

    /// Truncates a raw reading to this table's precision.
    pub fn concentration(&self, value: f64) -> Result<PollutantConcentration, AqiError> {
        PollutantConcentration::truncated(self.pollutant, value, self.precision)
    }

    pub fn top(&self) -> Option<&BreakpointRow> {
        self.rows.last()
    }
}

fn scaled_str(scaled: u64, precision: u8) -> String {
    format!("{:.*}", usize::from(precision), scaled as f64 / pow10(precision) as f64)
}

/// What to do with a concentration above the top breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OffScale {
    #[default]
    Error,
    /// Report [`AQI_MAX`].
    Clamp,
}

pub fn compute_sub_index(table: &BreakpointTable, conc: &PollutantConcentration) -> Result<u16, AqiError> {
    compute_sub_index_with(table, conc, OffScale::Error)
}

pub fn compute_sub_index_with(
    table: &BreakpointTable,
    conc: &PollutantConcentration,
    off_scale: OffScale,
) -> Result<u16, AqiError> {
    if conc.pollutant != table.pollutant {
        return Err(AqiError::PollutantMismatch {
            table: table.pollutant,
            got: conc.pollutant,
        });
    }
    if conc.precision != table.precision {
        return Err(AqiError::PrecisionMismatch {
            pollutant: table.pollutant,
            expected: table.precision,
            got: conc.precision,
        });
    }
    let (first, last) = match (table.rows.first(), table.rows.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(AqiError::NoTable(table.pollutant)),
    };
    if conc.scaled > last.c_high {
        return match off_scale {
            OffScale::Clamp => Ok(AQI_MAX),
            OffScale::Error => Err(AqiError::OutOfRange {
                pollutant: table.pollutant,
                value: conc.value(),
                limit: table.decimal(last.c_high),
            }),
        };
    }
    if conc.scaled < first.c_low {
        return Err(AqiError::BelowRange {
            pollutant: table.pollutant,
            value: conc.value(),
            limit: table.decimal(first.c_low),
        });
    }
    // Rows are sorted and contiguous, so the partition point is the only
    // candidate.
    let idx = table.rows.partition_point(|r| r.c_high < conc.scaled);
    let row = &table.rows[idx];
    debug_assert!(row.contains(conc.scaled));
    Ok(row.interpolate(conc.scaled))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Good,
    Moderate,
    UnhealthySensitive,
    Unhealthy,
    VeryUnhealthy,
    Hazardous,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Good,
        Category::Moderate,
        Category::UnhealthySensitive,
        Category::Unhealthy,
        Category::VeryUnhealthy,
        Category::Hazardous,
    ];

    /// Single-word identifier used on the wire.
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Good => "Good",
            Category::Moderate => "Moderate",
            Category::UnhealthySensitive => "UnhealthySensitive",
            Category::Unhealthy => "Unhealthy",
            Category::VeryUnhealthy => "VeryUnhealthy",
            Category::Hazardous => "Hazardous",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Good => "Good",
            Category::Moderate => "Moderate",
            Category::UnhealthySensitive => "Unhealthy for Sensitive Groups",
            Category::Unhealthy => "Unhealthy",
            Category::VeryUnhealthy => "Very Unhealthy",
            Category::Hazardous => "Hazardous",
        }
    }

    /// Inclusive index band.
    pub fn band(self) -> (u16, u16) {
        match self {
            Category::Good => (0, 50),
            Category::Moderate => (51, 100),
            Category::UnhealthySensitive => (101, 150),
            Category::Unhealthy => (151, 200),
            Category::VeryUnhealthy => (201, 300),
            Category::Hazardous => (301, 500),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

pub fn categorize(aqi: i64) -> Result<Category, AqiError> {
    Ok(match aqi {
        0..=50 => Category::Good,
        51..=100 => Category::Moderate,
        101..=150 => Category::UnhealthySensitive,
        151..=200 => Category::Unhealthy,
        201..=300 => Category::VeryUnhealthy,
        301..=500 => Category::Hazardous,
        other => return Err(AqiError::IndexOutOfRange(other)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AqiResult {
    pub sub_indices: BTreeMap<Pollutant, u16>,
    pub overall: u16,
    pub dominant: Pollutant,
    pub category: Category,
}

/// Applies the max rule. Ties go to the pollutant that comes first in
/// [`Pollutant::ALL`].
pub fn compute_overall(sub: &BTreeMap<Pollutant, u16>) -> Result<AqiResult, AqiError> {
    let mut best: Option<(Pollutant, u16)> = None;
    // BTreeMap iterates in declaration order, so strict `>` keeps the
    // earliest pollutant on ties.
    for (&p, &v) in sub {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((p, v));
        }
    }
    let (dominant, overall) = best.ok_or(AqiError::EmptyInput)?;
    Ok(AqiResult {
        sub_indices: sub.clone(),
        overall,
        dominant,
        category: categorize(i64::from(overall))?,
    })
}

/// Raw concentrations for one sample, before truncation. `None` leaves the
/// pollutant out of the max rule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sample {
    pub pm2_5: Option<f64>,
    pub pm10: Option<f64>,
    pub co: Option<f64>,
}

impl Sample {
    pub fn full(pm2_5: f64, pm10: f64, co: f64) -> Self {
        Self {
            pm2_5: Some(pm2_5),
            pm10: Some(pm10),
            co: Some(co),
        }
    }

    pub fn get(&self, p: Pollutant) -> Option<f64> {
        match p {
            Pollutant::Pm2_5 => self.pm2_5,
            Pollutant::Pm10 => self.pm10,
            Pollutant::Co => self.co,
        }
    }
}

impl AqiTables {
    /// Truncates, indexes and combines every pollutant present in `sample`.
    pub fn evaluate(&self, sample: &Sample, off_scale: OffScale) -> Result<AqiResult, AqiError> {
        let mut sub = BTreeMap::new();
        for p in Pollutant::ALL {
            if let Some(value) = sample.get(p) {
                let table = self.table(p);
                let conc = table.concentration(value)?;
                sub.insert(p, compute_sub_index_with(table, &conc, off_scale)?);
            }
        }
        compute_overall(&sub)
    }

    pub fn evaluate_batch(
        &self,
        samples: &[Sample],
        off_scale: OffScale,
        exec: Exec,
    ) -> Vec<Result<AqiResult, AqiError>> {
        batch::map(exec, samples, |s| self.evaluate(s, off_scale))
    }

    /// Sub-index for every scaled concentration in `range`.
    pub fn sweep(
        &self,
        pollutant: Pollutant,
        range: std::ops::Range<u64>,
        off_scale: OffScale,
        exec: Exec,
    ) -> Vec<Result<u16, AqiError>> {
        let table = self.table(pollutant);
        batch::map_range(exec, range, |scaled| {
            let conc = PollutantConcentration::from_scaled(pollutant, scaled, table.precision());
            compute_sub_index_with(table, &conc, off_scale)
        })
    }
}
