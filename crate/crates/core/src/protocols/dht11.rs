//! DHT11 40-bit transaction: humidity integer, humidity decimal, temperature
//! integer, temperature decimal, checksum (low byte of the sum of the four).

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FRAME_LEN: usize = 5;

/// Rated measurement range of the part.
pub const RATED_TEMP_C: (f64, f64) = (0.0, 50.0);
pub const RATED_HUMIDITY: (f64, f64) = (20.0, 90.0);

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum Dht11Error {
    #[error("expected 5 octets, got {0}")]
    Length(usize),
    #[error("checksum mismatch: frame says {expected:#04x}, computed {computed:#04x}")]
    BadChecksum { expected: u8, computed: u8 },
}

/// Decoded values outside the part's rated range. The frame is still usable.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("reading outside rated range: {temperature} C, {humidity} %RH")]
pub struct OutOfRange {
    pub temperature: f64,
    pub humidity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct Dht11Frame {
    pub humidity_int: u8,
    pub humidity_dec: u8,
    pub temp_int: u8,
    pub temp_dec: u8,
    pub checksum: u8,
}

fn sum(h_int: u8, h_dec: u8, t_int: u8, t_dec: u8) -> u8 {
    h_int.wrapping_add(h_dec).wrapping_add(t_int).wrapping_add(t_dec)
}

impl Dht11Frame {
    /// Builds a frame with a correct checksum.
    pub fn new(humidity_int: u8, humidity_dec: u8, temp_int: u8, temp_dec: u8) -> Self {
        Self {
            humidity_int,
            humidity_dec,
            temp_int,
            temp_dec,
            checksum: sum(humidity_int, humidity_dec, temp_int, temp_dec),
        }
    }

    /// Splits values into integer and tenths octets, rounding to the nearest
    /// tenth. Values are clamped to 0..=255.9.
    pub fn from_values(humidity: f64, temperature: f64) -> Self {
        let split = |v: f64| {
            let tenths = (v.clamp(0.0, 255.9) * 10.0).round() as u16;
            ((tenths / 10) as u8, (tenths % 10) as u8)
        };
        let (h_int, h_dec) = split(humidity);
        let (t_int, t_dec) = split(temperature);
        Self::new(h_int, h_dec, t_int, t_dec)
    }

    /// Degrees Celsius.
    pub fn temperature(&self) -> f64 {
        f64::from(self.temp_int) + f64::from(self.temp_dec) / 10.0
    }

    /// Percent relative humidity.
    pub fn humidity(&self) -> f64 {
        f64::from(self.humidity_int) + f64::from(self.humidity_dec) / 10.0
    }

    pub fn range_warning(&self) -> Option<OutOfRange> {
        let t = self.temperature();
        let h = self.humidity();
        let in_range =
            (RATED_TEMP_C.0..=RATED_TEMP_C.1).contains(&t) && (RATED_HUMIDITY.0..=RATED_HUMIDITY.1).contains(&h);
        (!in_range).then_some(OutOfRange {
            temperature: t,
            humidity: h,
        })
    }
}

pub fn encode(frame: &Dht11Frame) -> [u8; FRAME_LEN] {
    [
        frame.humidity_int,
        frame.humidity_dec,
        frame.temp_int,
        frame.temp_dec,
        frame.checksum,
    ]
}

pub fn decode(bytes: &[u8]) -> Result<Dht11Frame, Dht11Error> {
    let [h_int, h_dec, t_int, t_dec, checksum] =
        <[u8; FRAME_LEN]>::try_from(bytes).map_err(|_| Dht11Error::Length(bytes.len()))?;
    let computed = sum(h_int, h_dec, t_int, t_dec);
    if computed != checksum {
        return Err(Dht11Error::BadChecksum {
            expected: checksum,
            computed,
        });
    }
    Ok(Dht11Frame {
        humidity_int: h_int,
        humidity_dec: h_dec,
        temp_int: t_int,
        temp_dec: t_dec,
        checksum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_values() {
        let f = decode(&[62, 0, 29, 0, 91]).unwrap();
        assert_eq!(f.humidity(), 62.0);
        assert_eq!(f.temperature(), 29.0);
        assert!(f.range_warning().is_none());
    }

    #[test]
    fn off_by_one_checksum() {
        assert_eq!(
            decode(&[62, 0, 29, 0, 90]),
            Err(Dht11Error::BadChecksum {
                expected: 90,
                computed: 91
            })
        );
    }

    #[test]
    fn zero_frame_is_valid_but_out_of_range() {
        let f = decode(&[0; 5]).unwrap();
        assert_eq!((f.humidity(), f.temperature()), (0.0, 0.0));
        // 0 %RH is below the rated 20 %RH floor.
        assert!(f.range_warning().is_some());
    }

    #[test]
    fn wrong_length() {
        assert_eq!(decode(&[1, 2, 3]), Err(Dht11Error::Length(3)));
        assert_eq!(decode(&[0; 6]), Err(Dht11Error::Length(6)));
    }

    #[test]
    fn decimals_and_wrapping_checksum() {
        let f = Dht11Frame::from_values(85.5, 49.9);
        assert_eq!((f.humidity_int, f.humidity_dec, f.temp_int, f.temp_dec), (85, 5, 49, 9));
        let f = Dht11Frame::new(200, 9, 100, 9);
        assert_eq!(f.checksum, 62); // 318 mod 256
        assert_eq!(decode(&encode(&f)).unwrap(), f);
        assert!(f.range_warning().is_some());
    }

    proptest! {
        #[test]
        fn round_trip(h in any::<u8>(), hd in any::<u8>(), t in any::<u8>(), td in any::<u8>()) {
            let f = Dht11Frame::new(h, hd, t, td);
            prop_assert_eq!(decode(&encode(&f)).unwrap(), f);
        }
    }
}
