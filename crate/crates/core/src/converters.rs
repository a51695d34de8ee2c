//! Input DAC and SAR ADC transfer functions.
//!
//! Both converters are ideal mid-tread quantizers. The SAR search itself is
//! not modeled; only its code-to-voltage transfer and saturation.

use serde::{Deserialize, Serialize};

use crate::charge::signed_range;
use crate::error::{Error, Result};

/// A signed two's-complement code of a given width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DigitalCode {
    value: i32,
    bits: u32,
}

impl DigitalCode {
    pub fn new(value: i64, bits: u32) -> Result<Self> {
        if !(1..=31).contains(&bits) {
            return Err(Error::InvalidConfig(format!(
                "code width {bits} not in 1..=31"
            )));
        }
        let (lo, hi) = signed_range(bits);
        if value < lo as i64 || value > hi as i64 {
            return Err(Error::CodeOutOfRange { value, bits });
        }
        Ok(DigitalCode {
            value: value as i32,
            bits,
        })
    }

    /// Clamps `value` into range instead of failing.
    pub fn saturating(value: i64, bits: u32) -> Self {
        let (lo, hi) = signed_range(bits);
        DigitalCode {
            value: value.clamp(lo as i64, hi as i64) as i32,
            bits,
        }
    }

    pub fn value(&self) -> i32 {
        self.value
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn min_value(bits: u32) -> i32 {
        signed_range(bits).0
    }

    pub fn max_value(bits: u32) -> i32 {
        signed_range(bits).1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DacConfig {
    /// Sign plus magnitude bits.
    pub bits: u32,
    pub v_full_scale: f64,
    /// `C_DAC,tot / C_s,tot`; recorded for reference, the decode is ideal.
    pub cdac_ratio: f64,
}

impl Default for DacConfig {
    fn default() -> Self {
        DacConfig {
            bits: 6,
            v_full_scale: 32.0 * 7e-3,
            cdac_ratio: 35.0,
        }
    }
}

impl DacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=31).contains(&self.bits) {
            return Err(Error::InvalidConfig("dac.bits must be in 2..=31".into()));
        }
        if !(self.v_full_scale.is_finite() && self.v_full_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "dac.v_full_scale must be positive".into(),
            ));
        }
        if !(self.cdac_ratio.is_finite() && self.cdac_ratio > 0.0) {
            return Err(Error::InvalidConfig(
                "dac.cdac_ratio must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Volts per code.
    pub fn step(&self) -> f64 {
        self.v_full_scale / (1u64 << (self.bits - 1)) as f64
    }

    pub fn max_code(&self) -> i32 {
        DigitalCode::max_value(self.bits)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdcConfig {
    pub bits: u32,
    /// Volts per code.
    pub lsb: f64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        AdcConfig { bits: 6, lsb: 7e-3 }
    }
}

impl AdcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=31).contains(&self.bits) {
            return Err(Error::InvalidConfig("adc.bits must be in 1..=31".into()));
        }
        if !(self.lsb.is_finite() && self.lsb > 0.0) {
            return Err(Error::InvalidConfig("adc.lsb must be positive".into()));
        }
        Ok(())
    }
}

pub fn dac_decode(code: DigitalCode, cfg: &DacConfig) -> Result<f64> {
    let (lo, hi) = signed_range(cfg.bits);
    if code.value < lo || code.value > hi {
        return Err(Error::CodeOutOfRange {
            value: code.value as i64,
            bits: cfg.bits,
        });
    }
    Ok(code.value as f64 * cfg.step())
}

/// Nearest DAC code for a voltage, saturating at the rails.
pub fn dac_encode(v: f64, cfg: &DacConfig) -> DigitalCode {
    mid_tread(v / cfg.step(), cfg.bits)
}

/// Mid-tread, round-half-away-from-zero, saturating. NaN maps to code 0.
pub fn adc_quantize(v: f64, cfg: &AdcConfig) -> DigitalCode {
    mid_tread(v / cfg.lsb, cfg.bits)
}

fn mid_tread(x: f64, bits: u32) -> DigitalCode {
    // `as` saturates for out-of-range floats and maps NaN to 0
    DigitalCode::saturating(x.round() as i64, bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dac_endpoints() {
        let cfg = DacConfig::default();
        let c = |v| DigitalCode::new(v, 6).unwrap();
        assert_eq!(dac_decode(c(0), &cfg).unwrap(), 0.0);
        assert!((dac_decode(c(31), &cfg).unwrap() - 31.0 / 32.0 * cfg.v_full_scale).abs() < 1e-15);
        assert!((dac_decode(c(-32), &cfg).unwrap() + cfg.v_full_scale).abs() < 1e-15);
    }

    #[test]
    fn dac_rejects_wider_codes() {
        let cfg = DacConfig::default();
        let wide = DigitalCode::new(100, 8).unwrap();
        assert!(matches!(
            dac_decode(wide, &cfg),
            Err(Error::CodeOutOfRange {
                value: 100,
                bits: 6
            })
        ));
    }

    #[test]
    fn adc_examples() {
        let cfg = AdcConfig::default();
        assert_eq!(adc_quantize(0.0, &cfg).value(), 0);
        assert_eq!(adc_quantize(7e-3, &cfg).value(), 1);
        assert_eq!(adc_quantize(10.0, &cfg).value(), 31);
        assert_eq!(adc_quantize(-10.0, &cfg).value(), -32);
        assert_eq!(adc_quantize(-3.4e-3, &cfg).value(), 0);
        assert_eq!(adc_quantize(3.5e-3 + 1e-12, &cfg).value(), 1);
        assert_eq!(adc_quantize(-3.5e-3 - 1e-12, &cfg).value(), -1);
        assert_eq!(adc_quantize(f64::NAN, &cfg).value(), 0);
        assert_eq!(adc_quantize(f64::INFINITY, &cfg).value(), 31);
    }

    #[test]
    fn code_range_checks() {
        assert!(DigitalCode::new(31, 6).is_ok());
        assert!(DigitalCode::new(32, 6).is_err());
        assert!(DigitalCode::new(-33, 6).is_err());
        assert_eq!(DigitalCode::saturating(-1000, 6).value(), -32);
        assert_eq!(DigitalCode::min_value(3), -4);
        assert_eq!(DigitalCode::max_value(3), 3);
    }

    #[test]
    fn config_validation() {
        assert!(DacConfig {
            bits: 1,
            ..DacConfig::default()
        }
        .validate()
        .is_err());
        assert!(AdcConfig {
            lsb: 0.0,
            ..AdcConfig::default()
        }
        .validate()
        .is_err());
        assert!(DacConfig::default().validate().is_ok());
        assert!(AdcConfig::default().validate().is_ok());
    }
}
