use serde::{Deserialize, Serialize};

use super::{AqiError, BreakpointRow, BreakpointTable, Pollutant};

/// The embedded default tables.
pub const DEFAULT_BREAKPOINTS: &str = include_str!("breakpoints.toml");

/// Validated tables for every pollutant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AqiTables {
    pm2_5: BreakpointTable,
    pm10: BreakpointTable,
    co: BreakpointTable,
}

impl AqiTables {
    pub fn standard() -> Self {
        load_breakpoint_table(DEFAULT_BREAKPOINTS).expect("embedded breakpoint tables are valid")
    }

    pub fn table(&self, pollutant: Pollutant) -> &BreakpointTable {
        match pollutant {
            Pollutant::Pm2_5 => &self.pm2_5,
            Pollutant::Pm10 => &self.pm10,
            Pollutant::Co => &self.co,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &BreakpointTable> {
        [&self.pm2_5, &self.pm10, &self.co].into_iter()
    }
}

impl Default for AqiTables {
    fn default() -> Self {
        Self::standard()
    }
}

/// Unvalidated breakpoint tables as they appear in TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTables {
    pm2_5: Option<RawTable>,
    pm10: Option<RawTable>,
    co: Option<RawTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    precision: u8,
    rows: Vec<[f64; 4]>,
}

/// Parses breakpoint tables from TOML text. All three pollutant sections are
/// required.
pub fn load_breakpoint_table(source: &str) -> Result<AqiTables, AqiError> {
    let raw: RawTables = toml::from_str(source).map_err(|e| AqiError::MalformedConfig(e.message().to_string()))?;
    raw.validate()
}

impl RawTables {
    pub fn validate(self) -> Result<AqiTables, AqiError> {
        let pick = |raw: Option<RawTable>, p: Pollutant| {
            raw.ok_or_else(|| AqiError::MalformedConfig(format!("missing section [{}]", section(p))))
                .and_then(|t| t.build(p))
        };
        Ok(AqiTables {
            pm2_5: pick(self.pm2_5, Pollutant::Pm2_5)?,
            pm10: pick(self.pm10, Pollutant::Pm10)?,
            co: pick(self.co, Pollutant::Co)?,
        })
    }
}

fn section(p: Pollutant) -> &'static str {
    match p {
        Pollutant::Pm2_5 => "pm2_5",
        Pollutant::Pm10 => "pm10",
        Pollutant::Co => "co",
    }
}

impl RawTable {
    fn build(self, pollutant: Pollutant) -> Result<BreakpointTable, AqiError> {
        if self.rows.is_empty() {
            return Err(AqiError::MalformedConfig(format!(
                "[{}] has no rows",
                section(pollutant)
            )));
        }
        if self.precision > 6 {
            return Err(AqiError::MalformedConfig(format!(
                "[{}] precision {} exceeds 6",
                section(pollutant),
                self.precision
            )));
        }
        let scale = 10f64.powi(i32::from(self.precision));
        let bad =
            |row: usize, what: &str| AqiError::MalformedConfig(format!("[{}] row {row}: {what}", section(pollutant)));
        let mut rows = Vec::with_capacity(self.rows.len());
        for (k, [c_low, c_high, i_low, i_high]) in self.rows.into_iter().enumerate() {
            let scaled = |v: f64| -> Result<u64, AqiError> {
                if !v.is_finite() || v < 0.0 {
                    return Err(bad(k, "concentrations must be non-negative"));
                }
                let s = (v * scale).round();
                if (v * scale - s).abs() > 1e-6 {
                    return Err(bad(k, "concentration has more decimals than precision"));
                }
                Ok(s as u64)
            };
            let index = |v: f64| -> Result<u16, AqiError> {
                if v.fract() != 0.0 || !(0.0..=f64::from(u16::MAX)).contains(&v) {
                    return Err(bad(k, "index bounds must be non-negative integers"));
                }
                Ok(v as u16)
            };
            rows.push(BreakpointRow {
                c_low: scaled(c_low)?,
                c_high: scaled(c_high)?,
                i_low: index(i_low)?,
                i_high: index(i_high)?,
            });
        }
        if rows.windows(2).any(|w| w[1].c_low < w[0].c_low) {
            return Err(AqiError::MalformedConfig(format!(
                "[{}] rows are not sorted by c_low",
                section(pollutant)
            )));
        }
        BreakpointTable::new(pollutant, self.precision, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_contains_unhealthy_row() {
        let t = AqiTables::standard();
        let pm = t.table(Pollutant::Pm2_5);
        assert_eq!(pm.precision(), 1);
        assert!(pm.rows().contains(&BreakpointRow {
            c_low: 555,
            c_high: 1504,
            i_low: 151,
            i_high: 200
        }));
        assert_eq!(t.table(Pollutant::Pm10).precision(), 0);
        assert_eq!(t.table(Pollutant::Co).precision(), 1);
        assert_eq!(t.iter().count(), 3);
    }

    const TAIL: &str = "
[pm10]
precision = 0
rows = [[0, 54, 0, 50]]
[co]
precision = 1
rows = [[0.0, 4.4, 0, 50]]
";

    #[test]
    fn gap_is_non_contiguous() {
        let src = format!("[pm2_5]\nprecision = 0\nrows = [[0, 50, 0, 50], [60, 100, 51, 100]]\n{TAIL}");
        match load_breakpoint_table(&src) {
            Err(AqiError::NonContiguousRows { pollutant, row, .. }) => {
                assert_eq!(pollutant, Pollutant::Pm2_5);
                assert_eq!(row, 1);
            }
            other => panic!("expected NonContiguousRows, got {other:?}"),
        }
    }

    #[test]
    fn index_gap_is_non_contiguous() {
        let src = format!("[pm2_5]\nprecision = 0\nrows = [[0, 50, 0, 50], [51, 100, 52, 100]]\n{TAIL}");
        assert!(matches!(
            load_breakpoint_table(&src),
            Err(AqiError::NonContiguousRows { .. })
        ));
    }

    #[test]
    fn missing_co_is_malformed() {
        let src =
            "[pm2_5]\nprecision = 1\nrows = [[0.0, 12.0, 0, 50]]\n[pm10]\nprecision = 0\nrows = [[0, 54, 0, 50]]\n";
        match load_breakpoint_table(src) {
            Err(AqiError::MalformedConfig(msg)) => assert!(msg.contains("co"), "{msg}"),
            other => panic!("expected MalformedConfig, got {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        for src in [
            "not toml at all [",
            &format!("[pm2_5]\nprecision = 1\nrows = []\n{TAIL}"),
            &format!("[pm2_5]\nprecision = 1\nrows = [[0.0, 12.05, 0, 50]]\n{TAIL}"),
            &format!("[pm2_5]\nprecision = 1\nrows = [[0.0, 12.0, 0, 50.5]]\n{TAIL}"),
            &format!("[pm2_5]\nprecision = 1\nrows = [[12.0, 0.0, 0, 50]]\n{TAIL}"),
            &format!("[pm2_5]\nprecision = 1\nrows = [[0.0, 12.0, 0, 50]]\nextra = 1\n{TAIL}"),
            &format!("[o3]\nprecision = 1\nrows = [[0.0, 12.0, 0, 50]]\n{TAIL}"),
        ] {
            assert!(
                matches!(load_breakpoint_table(src), Err(AqiError::MalformedConfig(_))),
                "{src}"
            );
        }
    }

    #[test]
    fn integer_and_float_numbers_both_parse() {
        let src = format!("[pm2_5]\nprecision = 1\nrows = [[0, 12, 0, 50], [12.1, 35.4, 51, 100]]\n{TAIL}");
        let t = load_breakpoint_table(&src).unwrap();
        assert_eq!(t.table(Pollutant::Pm2_5).rows()[1].c_low, 121);
    }
}
