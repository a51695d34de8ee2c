//! End-to-end signal chain: input DAC, charge-domain MAC, SAR ADC.
//!
//! A [`Pipeline`] runs one MAC pass per weight row with the accumulator
//! reset between rows. Short rows are zero-padded at the end; zero-code
//! cycles neither add charge nor droop the accumulator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::charge::{effective_matrix, MacConfig, WeightMatrix};
use crate::converters::{adc_quantize, dac_decode, AdcConfig, DacConfig, DigitalCode};
use crate::error::{Error, Result};
use crate::noise::{noisy_mac_inner_product, stream_id, NoiseSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// Exact floating-point products; no quantization, droop or noise.
    Ideal,
    Simulated,
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    pub mac: MacConfig,
    pub dac: DacConfig,
    pub adc: AdcConfig,
    pub noise: NoiseSpec,
    pub fidelity: Fidelity,
}

impl Pipeline {
    pub fn new(mac: MacConfig, dac: DacConfig, adc: AdcConfig, noise: NoiseSpec) -> Result<Self> {
        mac.validate()?;
        dac.validate()?;
        adc.validate()?;
        Ok(Pipeline {
            mac,
            dac,
            adc,
            noise,
            fidelity: Fidelity::Simulated,
        })
    }

    pub fn with_fidelity(mut self, fidelity: Fidelity) -> Self {
        self.fidelity = fidelity;
        self
    }

    pub fn cycles(&self) -> usize {
        self.mac.cycles_per_product
    }

    /// Integer products (weight code x input code) per ADC code under ideal
    /// charge transfer.
    pub fn acc_per_code(&self) -> f64 {
        self.adc.lsb * self.mac.c2() / (self.mac.c_unit * self.dac.step())
    }

    fn pad_weights(&self, weights: &WeightMatrix) -> Result<WeightMatrix> {
        if weights.cols() == self.cycles() {
            Ok(weights.clone())
        } else {
            weights.padded(self.cycles())
        }
    }

    /// Effective matrix of the (padded) weights.
    pub fn effective(&self, weights: &WeightMatrix) -> Result<crate::charge::EffectiveMatrix> {
        effective_matrix(&self.pad_weights(weights)?, &self.mac)
    }

    /// Analog input voltages in, ADC codes out.
    pub fn run_voltages(
        &self,
        weights: &WeightMatrix,
        v_in: &[f64],
        trial: u64,
    ) -> Result<Vec<DigitalCode>> {
        let n = self.cycles();
        if v_in.len() != weights.cols() {
            return Err(Error::DimensionMismatch {
                what: "input length vs weight columns",
                expected: weights.cols(),
                found: v_in.len(),
            });
        }
        if v_in.len() > n {
            return Err(Error::DimensionMismatch {
                what: "input length vs cycles_per_product",
                expected: n,
                found: v_in.len(),
            });
        }
        let mut v = v_in.to_vec();
        v.resize(n, 0.0);
        let w = self.pad_weights(weights)?;
        (0..w.rows())
            .map(|j| {
                let trace = noisy_mac_inner_product(
                    &v,
                    &w.row(j),
                    &self.mac,
                    &self.noise,
                    stream_id(&[trial, j as u64]),
                )?;
                Ok(adc_quantize(trace.final_value(), &self.adc))
            })
            .collect()
    }

    /// Digital codes in, digital codes out.
    pub fn run_codes(
        &self,
        weights: &WeightMatrix,
        x: &[DigitalCode],
        trial: u64,
    ) -> Result<Vec<DigitalCode>> {
        let v: Vec<f64> = x
            .iter()
            .map(|&c| dac_decode(c, &self.dac))
            .collect::<Result<_>>()?;
        self.run_voltages(weights, &v, trial)
    }

    /// Real-valued `A x` through the pipeline. Inputs are scaled per vector
    /// to the DAC range and outputs are mapped back with the nominal gain.
    pub fn matvec(&self, a: &ProgrammedMatrix, x: &[f64], trial: u64) -> Result<Vec<f64>> {
        if x.len() != a.source.ncols() {
            return Err(Error::DimensionMismatch {
                what: "input length vs matrix columns",
                expected: a.source.ncols(),
                found: x.len(),
            });
        }
        if self.fidelity == Fidelity::Ideal {
            return Ok((0..a.source.nrows())
                .map(|j| a.source.row(j).iter().zip(x).map(|(w, v)| w * v).sum())
                .collect());
        }
        let (codes, s_x) = quantize_vector(x, self.dac.bits);
        if s_x == 0.0 {
            return Ok(vec![0.0; a.source.nrows()]);
        }
        let out = self.run_codes(&a.codes, &codes, trial)?;
        let acc = self.acc_per_code();
        Ok(out
            .iter()
            .zip(&a.row_scales)
            .map(|(c, s_w)| c.value() as f64 * acc / (s_w * s_x))
            .collect())
    }
}

/// Symmetric per-vector quantization to `bits`; returns codes and the
/// scale (codes per unit). A zero vector has scale 0.
pub fn quantize_vector(x: &[f64], bits: u32) -> (Vec<DigitalCode>, f64) {
    let qmax = DigitalCode::max_value(bits) as f64;
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return (vec![DigitalCode::saturating(0, bits); x.len()], 0.0);
    }
    let s = qmax / peak;
    let codes = x
        .iter()
        .map(|v| DigitalCode::saturating((v * s).round() as i64, bits))
        .collect();
    (codes, s)
}

/// A real matrix and its weight-code image, one scale per row.
#[derive(Clone, Debug)]
pub struct ProgrammedMatrix {
    source: DMatrix<f64>,
    codes: WeightMatrix,
    row_scales: Vec<f64>,
}

impl ProgrammedMatrix {
    /// Maps each row's peak magnitude to the largest positive code.
    pub fn quantize(a: &DMatrix<f64>, bits: u32) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix to program".into()));
        }
        let qmax = DigitalCode::max_value(bits) as f64;
        let mut row_scales = Vec::with_capacity(a.nrows());
        let mut codes = DMatrix::zeros(a.nrows(), a.ncols());
        for j in 0..a.nrows() {
            let peak = a.row(j).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let s = if peak == 0.0 { 1.0 } else { qmax / peak };
            for i in 0..a.ncols() {
                codes[(j, i)] = (a[(j, i)] * s).round() as i32;
            }
            row_scales.push(s);
        }
        Ok(ProgrammedMatrix {
            source: a.clone(),
            codes: WeightMatrix::new(codes, bits)?,
            row_scales,
        })
    }

    pub fn source(&self) -> &DMatrix<f64> {
        &self.source
    }

    pub fn codes(&self) -> &WeightMatrix {
        &self.codes
    }

    pub fn row_scales(&self) -> &[f64] {
        &self.row_scales
    }

    /// The programmed codes mapped back to real units.
    pub fn quantized_real(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.source.nrows(), self.source.ncols(), |j, i| {
            self.codes.codes()[(j, i)] as f64 / self.row_scales[j]
        })
    }

    /// Effective matrix in the same real units as the source.
    pub fn effective_real(&self, pipe: &Pipeline) -> Result<DMatrix<f64>> {
        let code_units = pipe.effective(&self.codes)?.in_code_units(&pipe.mac);
        let cols = self.source.ncols();
        Ok(DMatrix::from_fn(self.source.nrows(), cols, |j, i| {
            code_units[(j, i)] / self.row_scales[j]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pipe() -> Pipeline {
        Pipeline::new(
            MacConfig::default(),
            DacConfig::default(),
            AdcConfig::default(),
            NoiseSpec::disabled(),
        )
        .unwrap()
    }

    #[test]
    fn nominal_gain_is_c2_over_unit() {
        let p = pipe();
        assert!((p.acc_per_code() - 156.0).abs() < 1e-9);
    }

    #[test]
    fn ideal_matvec_is_exact() {
        let p = pipe().with_fidelity(Fidelity::Ideal);
        let a = DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 2.0, 0.1, 0.2, 0.3]);
        let pm = ProgrammedMatrix::quantize(&a, 3).unwrap();
        let y = p.matvec(&pm, &[1.0, 2.0, 3.0], 0).unwrap();
        assert_eq!(y, vec![0.5 - 2.0 + 6.0, 0.1 + 0.4 + 0.9]);
    }

    #[test]
    fn short_rows_are_padded() {
        let p = pipe();
        let w = WeightMatrix::from_rows(&[vec![3, -2, 1]], 3).unwrap();
        let x: Vec<DigitalCode> = [31, 10, -5]
            .iter()
            .map(|&v| DigitalCode::new(v, 6).unwrap())
            .collect();
        let y = p.run_codes(&w, &x, 0).unwrap();
        // padded cycles carry no charge, so the result equals the 3-cycle core
        let short = MacConfig {
            cycles_per_product: 3,
            ..MacConfig::default()
        };
        let v: Vec<f64> = x.iter().map(|c| dac_decode(*c, &p.dac).unwrap()).collect();
        let direct = crate::charge::mac_inner_product(&v, &[3, -2, 1], &short).unwrap();
        assert_eq!(y[0], adc_quantize(direct.final_value(), &p.adc));
    }

    #[test]
    fn quantization_uses_row_scale() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.0, 0.0]);
        let pm = ProgrammedMatrix::quantize(&a, 3).unwrap();
        assert_eq!(pm.codes().row(0), vec![3, -1]);
        assert_eq!(pm.codes().row(1), vec![0, 0]);
        assert!((pm.row_scales()[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_gives_zero_output() {
        let p = pipe();
        let pm = ProgrammedMatrix::quantize(&DMatrix::from_element(2, 4, 0.5), 3).unwrap();
        assert_eq!(p.matvec(&pm, &[0.0; 4], 0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn oversized_input_rejected() {
        let p = pipe();
        let w = WeightMatrix::zeros(1, 65, 3).unwrap();
        assert!(p.run_voltages(&w, &[0.0; 65], 0).is_err());
        let w = WeightMatrix::zeros(1, 8, 3).unwrap();
        assert!(p.run_voltages(&w, &[0.0; 7], 0).is_err());
    }
}
