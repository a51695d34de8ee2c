//! Behavioral simulator of a passive switched-capacitor matrix multiplier.
//!
//! The signal chain is a 6-bit input DAC, a charge-domain multiply
//! accumulate over 64 cycles with 3-bit capacitive weights, and a 6-bit SAR
//! ADC. Incomplete charge transfer turns the programmed matrix into an
//! effective matrix that is still linear in the input, which a digital
//! post-matrix can correct.

pub mod basis;
pub mod calibration;
pub mod charge;
pub mod config;
pub mod converters;
pub mod error;
pub mod experiments;
pub mod io;
pub mod noise;
pub mod pipeline;

pub use charge::{
    droop_and_gain, effective_matrix, mac_inner_product, matrix_multiply, CycleGain,
    EffectiveMatrix, MacConfig, MacMode, MacTrace, WeightMatrix,
};
pub use converters::{adc_quantize, dac_decode, AdcConfig, DacConfig, DigitalCode};
pub use error::{Error, Result};
pub use noise::{noisy_mac_inner_product, sigma_after_cycles, NoiseSpec};
