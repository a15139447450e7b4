//! MQ135 analog count to CO concentration.
//!
//! The sensor sits in a voltage divider with a load resistor, so the count
//! gives the sensing resistance `rs = r_load * (adc_max - adc) / adc`. The CO
//! curve is the usual power law `ppm = curve_a * (rs / r0) ^ curve_b`.
//!
//! The default curve constants are a common published MQ135 CO fit and `r0`
//! is a placeholder. Every real unit needs its own clean-air `r0`, and the
//! absolute ppm values are only as good as that calibration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{self, Exec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("ADC count {adc} is at a rail (0 or {adc_max}); resistance is undefined")]
    Saturated { adc: u32, adc_max: u32 },
    #[error("ADC count {adc} exceeds converter maximum {adc_max}")]
    CountOutOfRange { adc: u32, adc_max: u32 },
    #[error("sensor resistance must be positive and finite, got {0}")]
    InvalidResistance(f64),
    #[error("concentration must be positive and finite, got {0}")]
    InvalidConcentration(f64),
    #[error("invalid calibration config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mq135Config {
    /// Supply voltage, volts.
    pub vcc: f64,
    /// Full-scale converter count (1023 for a 10-bit ADC).
    pub adc_max: u32,
    /// Load resistor, ohms.
    pub r_load: f64,
    /// Sensor resistance in clean air, ohms.
    pub r0: f64,
    pub curve_a: f64,
    /// Must be negative: resistance falls as concentration rises.
    pub curve_b: f64,
}

impl Default for Mq135Config {
    fn default() -> Self {
        Self {
            vcc: 5.0,
            adc_max: 1023,
            r_load: 10_000.0,
            r0: 10_000.0,
            curve_a: 605.18,
            curve_b: -3.937,
        }
    }
}

impl Mq135Config {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(CalibrationError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("vcc", self.vcc)?;
        positive("r_load", self.r_load)?;
        positive("r0", self.r0)?;
        positive("curve_a", self.curve_a)?;
        if self.adc_max < 2 || self.adc_max > u32::from(u16::MAX) {
            return Err(CalibrationError::InvalidConfig(format!(
                "adc_max must be in 2..=65535, got {}",
                self.adc_max
            )));
        }
        if !(self.curve_b.is_finite() && self.curve_b < 0.0) {
            return Err(CalibrationError::InvalidConfig(format!(
                "curve_b must be negative, got {}",
                self.curve_b
            )));
        }
        Ok(())
    }

    pub fn adc_voltage(&self, adc: u32) -> f64 {
        self.vcc * f64::from(adc) / f64::from(self.adc_max)
    }
}

pub fn adc_to_rs(adc: u32, cfg: &Mq135Config) -> Result<f64, CalibrationError> {
    if adc > cfg.adc_max {
        return Err(CalibrationError::CountOutOfRange {
            adc,
            adc_max: cfg.adc_max,
        });
    }
    if adc == 0 || adc == cfg.adc_max {
        return Err(CalibrationError::Saturated {
            adc,
            adc_max: cfg.adc_max,
        });
    }
    Ok(cfg.r_load * f64::from(cfg.adc_max - adc) / f64::from(adc))
}

pub fn rs_to_ppm(rs: f64, cfg: &Mq135Config) -> Result<f64, CalibrationError> {
    if !(rs.is_finite() && rs > 0.0) {
        return Err(CalibrationError::InvalidResistance(rs));
    }
    Ok(cfg.curve_a * (rs / cfg.r0).powf(cfg.curve_b))
}

pub fn adc_to_ppm(adc: u32, cfg: &Mq135Config) -> Result<f64, CalibrationError> {
    rs_to_ppm(adc_to_rs(adc, cfg)?, cfg)
}

/// Inverse of [`rs_to_ppm`].
pub fn ppm_to_rs(ppm: f64, cfg: &Mq135Config) -> Result<f64, CalibrationError> {
    if !(ppm.is_finite() && ppm > 0.0) {
        return Err(CalibrationError::InvalidConcentration(ppm));
    }
    Ok(cfg.r0 * (ppm / cfg.curve_a).powf(1.0 / cfg.curve_b))
}

/// Count a converter would report for `rs`, rounded to the nearest count.
pub fn rs_to_adc(rs: f64, cfg: &Mq135Config) -> Result<u32, CalibrationError> {
    if !(rs.is_finite() && rs > 0.0) {
        return Err(CalibrationError::InvalidResistance(rs));
    }
    let exact = f64::from(cfg.adc_max) * cfg.r_load / (rs + cfg.r_load);
    let adc = exact.round() as u32;
    if adc == 0 || adc >= cfg.adc_max {
        return Err(CalibrationError::Saturated {
            adc: adc.min(cfg.adc_max),
            adc_max: cfg.adc_max,
        });
    }
    Ok(adc)
}

pub fn ppm_to_adc(ppm: f64, cfg: &Mq135Config) -> Result<u32, CalibrationError> {
    rs_to_adc(ppm_to_rs(ppm, cfg)?, cfg)
}

/// Largest ppm step between `adc` and a neighbouring count: the resolution of
/// the chain at that operating point.
pub fn count_resolution(adc: u32, cfg: &Mq135Config) -> Result<f64, CalibrationError> {
    let here = adc_to_ppm(adc, cfg)?;
    let step = |n: u32| adc_to_ppm(n, cfg).map(|p| (p - here).abs()).ok();
    let down = adc.checked_sub(1).and_then(step);
    let up = step(adc + 1);
    Ok(down.into_iter().chain(up).fold(0.0, f64::max))
}

pub fn ppm_batch(counts: &[u32], cfg: &Mq135Config, exec: Exec) -> Vec<Result<f64, CalibrationError>> {
    batch::map(exec, counts, |&adc| adc_to_ppm(adc, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mid_scale_resistance() {
        let cfg = Mq135Config::default();
        // 10000 * (1023 - 512) / 512
        let rs = adc_to_rs(512, &cfg).unwrap();
        assert!((rs - 9980.46875).abs() < 1e-9, "{rs}");
    }

    #[test]
    fn rails_are_saturated() {
        let cfg = Mq135Config::default();
        assert_eq!(
            adc_to_rs(0, &cfg),
            Err(CalibrationError::Saturated { adc: 0, adc_max: 1023 })
        );
        assert_eq!(
            adc_to_rs(1023, &cfg),
            Err(CalibrationError::Saturated {
                adc: 1023,
                adc_max: 1023
            })
        );
        assert!(matches!(
            adc_to_rs(1024, &cfg),
            Err(CalibrationError::CountOutOfRange { .. })
        ));
    }

    #[test]
    fn ratio_one_gives_curve_a() {
        let cfg = Mq135Config::default();
        assert_eq!(rs_to_ppm(cfg.r0, &cfg).unwrap(), cfg.curve_a);
    }

    #[test]
    fn lower_resistance_means_more_gas() {
        let cfg = Mq135Config::default();
        assert!(rs_to_ppm(5_000.0, &cfg).unwrap() > rs_to_ppm(20_000.0, &cfg).unwrap());
        assert!(rs_to_ppm(0.0, &cfg).is_err());
        assert!(rs_to_ppm(f64::NAN, &cfg).is_err());
    }

    #[test]
    fn inversion_hits_target() {
        let cfg = Mq135Config::default();
        let target = 5.27;
        let rs = cfg.r0 * (target / cfg.curve_a).powf(1.0 / cfg.curve_b);
        assert!((rs_to_ppm(rs, &cfg).unwrap() - target).abs() < 1e-9);
        assert!((ppm_to_rs(target, &cfg).unwrap() - rs).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(Mq135Config::default().validate().is_ok());
        let bad = [
            Mq135Config {
                curve_b: 0.5,
                ..Default::default()
            },
            Mq135Config {
                r0: 0.0,
                ..Default::default()
            },
            Mq135Config {
                adc_max: 1,
                ..Default::default()
            },
            Mq135Config {
                adc_max: 70_000,
                ..Default::default()
            },
            Mq135Config {
                vcc: -5.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn voltage() {
        let cfg = Mq135Config::default();
        assert_eq!(cfg.adc_voltage(1023), 5.0);
        assert_eq!(cfg.adc_voltage(0), 0.0);
    }

    #[test]
    fn batch_agrees() {
        let cfg = Mq135Config::default();
        let counts: Vec<u32> = (0..=1023).collect();
        assert_eq!(
            ppm_batch(&counts, &cfg, Exec::Parallel),
            ppm_batch(&counts, &cfg, Exec::Sequential)
        );
    }

    proptest! {
        #[test]
        fn strictly_decreasing_in_count(adc in 1u32..1021) {
            let cfg = Mq135Config::default();
            prop_assert!(adc_to_rs(adc, &cfg).unwrap() > adc_to_rs(adc + 1, &cfg).unwrap());
            // Higher count, lower rs, higher ppm.
            prop_assert!(adc_to_ppm(adc, &cfg).unwrap() < adc_to_ppm(adc + 1, &cfg).unwrap());
        }

        #[test]
        fn chain_closes_within_one_count(ppm in 1.0f64..1000.0) {
            let cfg = Mq135Config::default();
            let adc = ppm_to_adc(ppm, &cfg).unwrap();
            let back = adc_to_ppm(adc, &cfg).unwrap();
            prop_assert!((back - ppm).abs() <= count_resolution(adc, &cfg).unwrap());
        }
    }
}
