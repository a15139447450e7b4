//! Deterministic virtual sensors.
//!
//! A [`Scenario`] scripts what the air is doing; [`run_scenario`] turns it
//! into the octets each sensor channel would deliver, cycle by cycle, with
//! noise and faults applied. Same seed and scenario, same octets.

pub mod prng;
mod scenario;

use thiserror::Error;

use crate::calibration::{self, CalibrationError, Mq135Config};
use crate::protocols::dump::{self, CycleChunks, DumpError};
use crate::protocols::{adc, dht11, pms5003, Dht11Frame, Pms5003Frame, SensorKind};

pub use prng::SplitMix64;
pub use scenario::{ChannelSel, FaultKind, FaultSpec, Noise, Scenario, Step};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("step {step}: CO {ppm} ppm cannot be produced by the ADC: {source}")]
    Unreachable {
        step: usize,
        ppm: f64,
        source: CalibrationError,
    },
}

/// Values actually encoded for one cycle, after noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub cycle: u32,
    pub pm2_5: u16,
    pub pm10: u16,
    pub temperature: f64,
    pub humidity: f64,
    pub adc: u16,
    /// Scripted concentration before quantization and noise.
    pub co_ppm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub cycles: Vec<CycleChunks>,
    pub truth: Vec<Truth>,
}

impl ScenarioOutput {
    /// One channel's octets, concatenated across cycles.
    pub fn stream(&self, kind: SensorKind) -> Vec<u8> {
        self.cycles
            .iter()
            .filter_map(|c| c.get(kind))
            .flatten()
            .copied()
            .collect()
    }

    pub fn to_dump(&self) -> Vec<u8> {
        dump::encode_records(&dump::cycles_to_records(&self.cycles))
    }

    /// Per-channel scripts, ready to back gateway sources.
    pub fn into_channel_scripts(self) -> [Vec<Option<Vec<u8>>>; 3] {
        let mut out: [Vec<Option<Vec<u8>>>; 3] = Default::default();
        for mut c in self.cycles {
            for (i, kind) in SensorKind::ALL.into_iter().enumerate() {
                out[i].push(c.take(kind));
            }
        }
        out
    }
}

/// A PMS5003 frame for the given PM values with particle counts that fall
/// off with size.
pub fn synth_pms_frame(pm2_5: u16, pm10: u16) -> Pms5003Frame {
    let (a, b) = (u32::from(pm2_5), u32::from(pm10));
    let clamp = |v: u32| v.min(u32::from(u16::MAX)) as u16;
    Pms5003Frame {
        pm1_0_cf1: clamp(a * 2 / 3),
        pm1_0_atm: clamp(a * 2 / 3),
        counts_0_3um: clamp(60 * a + 10 * b),
        counts_0_5um: clamp(20 * a + 5 * b),
        counts_1_0um: clamp(5 * a + 2 * b),
        counts_2_5um: clamp(a + b),
        counts_5_0um: clamp(b / 2),
        counts_10um: clamp(b / 4),
        ..Pms5003Frame::with_pm(pm2_5, pm10)
    }
}

fn jittered(base: f64, j: i64, lo: f64, hi: f64) -> f64 {
    (base + j as f64).clamp(lo, hi)
}

/// Renders a scenario into per-cycle channel octets.
///
/// Per cycle the noise generator is drawn exactly five times, in the order
/// pm2.5, pm10, temperature, humidity, ADC count. Garbage octets come from a
/// second generator seeded with `seed ^ 0xA5A5_A5A5_A5A5_A5A5` so that faults
/// never shift the noise sequence.
pub fn run_scenario(s: &Scenario, cfg: &Mq135Config) -> Result<ScenarioOutput, SimError> {
    s.validate()?;
    cfg.validate().map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let mut base_counts = Vec::with_capacity(s.steps.len());
    for (i, step) in s.steps.iter().enumerate() {
        let count = calibration::ppm_to_adc(step.co_ppm, cfg).map_err(|source| SimError::Unreachable {
            step: i,
            ppm: step.co_ppm,
            source,
        })?;
        base_counts.push(count);
    }

    let mut noise = SplitMix64::new(s.seed);
    let mut garbage = SplitMix64::new(s.seed ^ 0xA5A5_A5A5_A5A5_A5A5);
    let total = s.total_cycles();
    let mut cycles = Vec::with_capacity(total as usize);
    let mut truth = Vec::with_capacity(total as usize);

    let per_cycle = s
        .steps
        .iter()
        .zip(&base_counts)
        .flat_map(|(step, &count)| std::iter::repeat_n((step, count), step.duration as usize));
    for (idx, (step, count)) in per_cycle.enumerate() {
        let cycle = idx as u32 + 1;
        let n = &s.noise;
        let pm2_5 = jittered(f64::from(step.pm2_5), noise.jitter(n.pm2_5), 0.0, 65535.0) as u16;
        let pm10 = jittered(f64::from(step.pm10), noise.jitter(n.pm10), 0.0, 65535.0) as u16;
        let temperature = jittered(step.temperature, noise.jitter(n.temperature), 0.0, 255.9);
        let humidity = jittered(step.humidity, noise.jitter(n.humidity), 0.0, 255.9);
        let adc_count = jittered(f64::from(count), noise.jitter(n.adc), 1.0, f64::from(cfg.adc_max - 1)) as u16;

        let mut chunks = CycleChunks {
            pms5003: Some(pms5003::encode(&synth_pms_frame(pm2_5, pm10)).to_vec()),
            dht11: Some(dht11::encode(&Dht11Frame::from_values(humidity, temperature)).to_vec()),
            adc: Some(adc::encode(adc_count).to_vec()),
        };
        for fault in &s.faults {
            fault.apply(cycle, &mut chunks, &mut garbage);
        }
        cycles.push(chunks);
        truth.push(Truth {
            cycle,
            pm2_5,
            pm10,
            temperature,
            humidity,
            adc: adc_count,
            co_ppm: step.co_ppm,
        });
    }
    Ok(ScenarioOutput { cycles, truth })
}

/// Parses a capture into per-cycle chunks for replay.
pub fn replay_capture(bytes: &[u8]) -> Result<Vec<CycleChunks>, DumpError> {
    Ok(dump::records_to_cycles(&dump::parse_records(bytes)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{resync, Dht11Error};

    fn reference() -> Scenario {
        Scenario::reference_log()
    }

    fn cfg16() -> Mq135Config {
        Mq135Config {
            adc_max: 65535,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let mut s = reference();
        s.noise = Noise {
            pm2_5: 3,
            pm10: 3,
            temperature: 1,
            humidity: 1,
            adc: 5,
        };
        s.faults.push(FaultSpec {
            at: 2,
            kind: FaultKind::GarbageBurst { n: 9 },
            channel: None,
        });
        let a = run_scenario(&s, &cfg16()).unwrap();
        let b = run_scenario(&s, &cfg16()).unwrap();
        assert_eq!(a.to_dump(), b.to_dump());
        s.seed = 2;
        let c = run_scenario(&s, &cfg16()).unwrap();
        assert_ne!(a.to_dump(), c.to_dump());
    }

    #[test]
    fn noise_free_streams_decode_to_script() {
        let s = reference();
        let out = run_scenario(&s, &cfg16()).unwrap();
        assert_eq!(out.cycles.len(), 10);
        let (frames, stats) = resync(&out.stream(SensorKind::Pms5003));
        assert_eq!(stats.skipped_octets, 0);
        let pm: Vec<_> = frames.iter().map(|f| (f.pm2_5_atm, f.pm10_atm)).collect();
        let scripted: Vec<_> = s.steps.iter().map(|st| (st.pm2_5, st.pm10)).collect();
        assert_eq!(pm, scripted);
        assert!(frames.iter().all(Pms5003Frame::counts_monotone));
        for (c, st) in out.cycles.iter().zip(&s.steps) {
            let d = dht11::decode(c.dht11.as_deref().unwrap()).unwrap();
            assert_eq!((d.temperature(), d.humidity()), (st.temperature, st.humidity));
        }
    }

    #[test]
    fn faults_shape_the_octets() {
        let mut s = reference();
        s.faults = vec![
            FaultSpec {
                at: 1,
                kind: FaultKind::CorruptChecksum,
                channel: None,
            },
            FaultSpec {
                at: 2,
                kind: FaultKind::TruncateFrame,
                channel: None,
            },
            FaultSpec {
                at: 3,
                kind: FaultKind::GarbageBurst { n: 7 },
                channel: None,
            },
            FaultSpec {
                at: 4,
                kind: FaultKind::Silence { cycles: 2 },
                channel: None,
            },
            FaultSpec {
                at: 7,
                kind: FaultKind::CorruptChecksum,
                channel: Some(ChannelSel::Dht11),
            },
        ];
        let out = run_scenario(&s, &cfg16()).unwrap();
        let c = &out.cycles;
        assert!(pms5003::decode(c[0].pms5003.as_deref().unwrap()).is_err());
        assert_eq!(c[1].pms5003.as_ref().unwrap().len(), 16);
        assert_eq!(c[2].pms5003.as_ref().unwrap().len(), 39);
        for i in [3, 4] {
            assert_eq!(c[i], CycleChunks::default());
        }
        assert!(c[5].pms5003.is_some());
        assert!(matches!(
            dht11::decode(c[6].dht11.as_deref().unwrap()),
            Err(Dht11Error::BadChecksum { .. })
        ));
        assert!(pms5003::decode(c[6].pms5003.as_deref().unwrap()).is_ok());
    }

    #[test]
    fn garbage_before_cycle_three_is_recovered() {
        let mut s = reference();
        s.faults = vec![FaultSpec {
            at: 3,
            kind: FaultKind::GarbageBurst { n: 7 },
            channel: None,
        }];
        let out = run_scenario(&s, &cfg16()).unwrap();
        let (frames, stats) = resync(&out.stream(SensorKind::Pms5003));
        assert_eq!(frames.len(), 10);
        assert_eq!((frames[2].pm2_5_atm, frames[2].pm10_atm), (209, 118));
        assert!(stats.skipped_octets >= 7);
    }

    #[test]
    fn unreachable_co_is_rejected() {
        let mut s = reference();
        s.steps[0].co_ppm = 1e-30;
        assert!(matches!(
            run_scenario(&s, &cfg16()),
            Err(SimError::Unreachable { step: 0, .. })
        ));
    }

    #[test]
    fn replay_matches_run() {
        let out = run_scenario(&reference(), &cfg16()).unwrap();
        assert_eq!(replay_capture(&out.to_dump()).unwrap(), out.cycles);
        assert!(replay_capture(&[]).unwrap().is_empty());
        assert!(matches!(
            replay_capture(&[0x09, 0, 0, 0, 0]),
            Err(DumpError::MalformedDump { offset: 0, .. })
        ));
    }

    #[test]
    fn channel_scripts_line_up() {
        let mut s = reference();
        s.faults = vec![FaultSpec {
            at: 2,
            kind: FaultKind::Silence { cycles: 1 },
            channel: Some(ChannelSel::Mq135),
        }];
        let [pms, dht, adc] = run_scenario(&s, &cfg16()).unwrap().into_channel_scripts();
        assert_eq!((pms.len(), dht.len(), adc.len()), (10, 10, 10));
        assert!(adc[1].is_none() && pms[1].is_some());
    }
}
