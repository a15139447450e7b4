//! Two-line summary in the style of a 16x2 character display.
//!
//! ```text
//! AQI 193 Unhealthy
//! PM2.5 180 PM10 108 T29 H62 CO5.27
//! ```

use super::TelemetryLine;

/// Marker appended to line 1 when the data is not live.
pub const STALE_MARK: &str = " [stale]";

pub fn render(line: &TelemetryLine, stale: bool) -> [String; 2] {
    let mut top = format!("AQI {} {}", line.aqi, line.category.label());
    if stale {
        top.push_str(STALE_MARK);
    }
    let bottom = format!(
        "PM2.5 {} PM10 {} T{} H{} CO{}.{:02}",
        line.pm2_5,
        line.pm10,
        line.temperature,
        line.humidity,
        line.co_centi / 100,
        line.co_centi % 100
    );
    [top, bottom]
}

/// Shown before any reading has arrived.
pub fn render_waiting(reason: &str) -> [String; 2] {
    ["AQI --- waiting".to_string(), reason.to_string()]
}
