use std::fmt;

use serde::{Deserialize, Serialize};

use super::{SimError, SplitMix64};
use crate::calibration::Mq135Config;
use crate::protocols::dump::CycleChunks;
use crate::protocols::SensorKind;

/// The ten-sample log used as the replay fixture throughout the repo.
const REFERENCE_LOG: &str = include_str!("reference_log.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: Noise,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    /// Converter and curve the ADC channel is synthesized against. The
    /// gateway must decode with the same values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Mq135Config>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    /// Cycles this step lasts.
    pub duration: u32,
    pub pm2_5: u16,
    pub pm10: u16,
    pub temperature: f64,
    pub humidity: f64,
    pub co_ppm: f64,
}

/// Jitter amplitudes in each channel's wire unit: ug/m3 for PM, whole
/// degrees and percent for the DHT11, converter counts for the ADC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Noise {
    pub pm2_5: u32,
    pub pm10: u32,
    pub temperature: u32,
    pub humidity: u32,
    pub adc: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FaultKind {
    /// Breaks the frame's checksum octet.
    CorruptChecksum,
    /// Delivers only the first half of the frame.
    TruncateFrame,
    /// Prepends `n` pseudo-random octets.
    GarbageBurst { n: u32 },
    /// The channel delivers nothing for `cycles` cycles.
    Silence { cycles: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelSel {
    Pms5003,
    Dht11,
    Mq135,
    All,
}

impl ChannelSel {
    fn covers(self, kind: SensorKind) -> bool {
        match self {
            ChannelSel::All => true,
            ChannelSel::Pms5003 => kind == SensorKind::Pms5003,
            ChannelSel::Dht11 => kind == SensorKind::Dht11,
            ChannelSel::Mq135 => kind == SensorKind::Adc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    /// 1-based cycle the fault hits (the first, for silence).
    pub at: u32,
    #[serde(flatten)]
    pub kind: FaultKind,
    /// Defaults to every channel for silence and to the PMS5003 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelSel>,
}

impl FaultSpec {
    pub fn channels(&self) -> ChannelSel {
        self.channel.unwrap_or(match self.kind {
            FaultKind::Silence { .. } => ChannelSel::All,
            _ => ChannelSel::Pms5003,
        })
    }

    fn active(&self, cycle: u32) -> bool {
        match self.kind {
            FaultKind::Silence { cycles } => (self.at..self.at.saturating_add(cycles)).contains(&cycle),
            _ => cycle == self.at,
        }
    }

    pub(super) fn apply(&self, cycle: u32, chunks: &mut CycleChunks, garbage: &mut SplitMix64) {
        if !self.active(cycle) {
            return;
        }
        let sel = self.channels();
        for kind in SensorKind::ALL {
            if !sel.covers(kind) {
                continue;
            }
            if let FaultKind::Silence { .. } = self.kind {
                chunks.take(kind);
                continue;
            }
            let Some(bytes) = chunks.take(kind) else { continue };
            let bytes = match self.kind {
                FaultKind::CorruptChecksum => {
                    let mut b = bytes;
                    if let Some(last) = b.last_mut() {
                        *last = last.wrapping_add(1);
                    }
                    b
                }
                FaultKind::TruncateFrame => bytes[..bytes.len() / 2].to_vec(),
                FaultKind::GarbageBurst { n } => {
                    let mut b: Vec<u8> = (0..n).map(|_| garbage.next_byte()).collect();
                    b.extend_from_slice(&bytes);
                    b
                }
                FaultKind::Silence { .. } => unreachable!(),
            };
            chunks.append(kind, &bytes);
        }
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ch = match self.channels() {
            ChannelSel::All => "all channels",
            ChannelSel::Pms5003 => "pms5003",
            ChannelSel::Dht11 => "dht11",
            ChannelSel::Mq135 => "mq135",
        };
        match self.kind {
            FaultKind::CorruptChecksum => write!(f, "cycle {}: corrupt checksum on {ch}", self.at),
            FaultKind::TruncateFrame => write!(f, "cycle {}: truncate frame on {ch}", self.at),
            FaultKind::GarbageBurst { n } => write!(f, "cycle {}: {n} garbage octets on {ch}", self.at),
            FaultKind::Silence { cycles } => write!(f, "cycles {}..{}: silence on {ch}", self.at, self.at + cycles - 1),
        }
    }
}

impl Scenario {
    pub fn from_toml(src: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(src).map_err(|e| SimError::InvalidScenario(e.message().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Ten cycles of recorded station output, noise- and fault-free, with a
    /// 16-bit converter so CO survives quantization to two decimals.
    pub fn reference_log() -> Self {
        Self::from_toml(REFERENCE_LOG).expect("embedded reference scenario is valid")
    }

    pub fn total_cycles(&self) -> u32 {
        self.steps.iter().map(|s| s.duration).sum()
    }

    pub fn calibration(&self) -> Mq135Config {
        self.calibration.unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.steps.is_empty() {
            return bad("at least one step is required".into());
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.duration == 0 {
                return bad(format!("step {i}: duration must be at least 1"));
            }
            for (name, v) in [("temperature", s.temperature), ("humidity", s.humidity)] {
                if !(0.0..=255.9).contains(&v) {
                    return bad(format!("step {i}: {name} {v} does not fit a DHT11 frame"));
                }
            }
            if !(s.co_ppm.is_finite() && s.co_ppm > 0.0) {
                return bad(format!("step {i}: co_ppm must be positive"));
            }
        }
        let total = self.total_cycles();
        for f in &self.faults {
            if f.at == 0 || f.at > total {
                return bad(format!("fault at cycle {} is outside 1..={total}", f.at));
            }
            match f.kind {
                FaultKind::GarbageBurst { n: 0 } => {
                    return bad(format!("fault at cycle {}: empty garbage burst", f.at))
                }
                FaultKind::Silence { cycles: 0 } => {
                    return bad(format!("fault at cycle {}: zero-length silence", f.at))
                }
                FaultKind::CorruptChecksum if f.channels() == ChannelSel::Mq135 => {
                    return bad(format!("fault at cycle {}: the ADC channel has no checksum", f.at))
                }
                _ => {}
            }
        }
        if let Some(cal) = &self.calibration {
            cal.validate().map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        }
        Ok(())
    }

    /// Human-readable summary for the CLI.
    pub fn describe(&self) -> String {
        let mut out = format!(
            "seed {}, {} step(s), {} cycle(s)\n",
            self.seed,
            self.steps.len(),
            self.total_cycles()
        );
        let n = &self.noise;
        out += &format!(
            "noise: pm2.5 +-{} pm10 +-{} T +-{} H +-{} adc +-{}\n",
            n.pm2_5, n.pm10, n.temperature, n.humidity, n.adc
        );
        let mut cycle = 1;
        for s in &self.steps {
            out += &format!(
                "  cycles {:>4}..{:<4} pm2.5 {:>5} pm10 {:>5} T {:>5.1} H {:>5.1} CO {:>7.2}\n",
                cycle,
                cycle + s.duration - 1,
                s.pm2_5,
                s.pm10,
                s.temperature,
                s.humidity,
                s.co_ppm
            );
            cycle += s.duration;
        }
        for f in &self.faults {
            out += &format!("  fault: {f}\n");
        }
        if let Some(c) = &self.calibration {
            out += &format!(
                "calibration: adc_max {} r_load {} r0 {} curve {} * x^{}\n",
                c.adc_max, c.r_load, c.r0, c.curve_a, c.curve_b
            );
        }
        out
    }
}
