//! Charge-domain multiply-accumulate core.
//!
//! Each cycle the input voltage is sampled onto a weight-selected capacitor
//! `C1` and then shared with the accumulation capacitor `C2`. The shared
//! charge is never transferred completely, so the accumulated voltage obeys
//!
//! ```text
//! V[i] = k[i] * V[i-1] + mu[i] * k[i] * Vin[i]
//! ```
//!
//! with a droop `k` and a gain `mu` that depend only on capacitor ratios
//! (passive) or on ratios and the amplifier DC gain (active). Unrolling the
//! recurrence over a full product gives the effective matrix the hardware
//! applies in place of the programmed one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOLTZMANN: f64 = 1.380649e-23;

/// How charge is moved onto the accumulation capacitor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MacMode {
    /// Switches and capacitors only.
    Passive,
    /// Charge transfer through an amplifier with finite DC gain.
    Active { dc_gain: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacConfig {
    pub mode: MacMode,
    /// Unit multiplying capacitor, farads.
    pub c_unit: f64,
    /// Unit capacitors selected by a full-scale weight code.
    pub weight_levels: u32,
    /// Signed weight code width.
    pub weight_bits: u32,
    /// `C2 / C_s,tot`.
    pub c2_ratio: f64,
    pub cycles_per_product: usize,
    /// Kelvin.
    pub temperature: f64,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            mode: MacMode::Passive,
            c_unit: 300e-18,
            weight_levels: 4,
            weight_bits: 3,
            c2_ratio: 39.0,
            cycles_per_product: 64,
            temperature: 300.0,
        }
    }
}

impl MacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.c_unit.is_finite() && self.c_unit > 0.0) {
            return bad("mac.c_unit must be a positive capacitance");
        }
        if !(self.c2_ratio.is_finite() && self.c2_ratio > 0.0) {
            return bad("mac.c2_ratio must be positive");
        }
        if self.weight_levels < 1 {
            return bad("mac.weight_levels must be at least 1");
        }
        if !(1..=31).contains(&self.weight_bits) {
            return bad("mac.weight_bits must be in 1..=31");
        }
        if self.cycles_per_product < 1 {
            return bad("mac.cycles_per_product must be at least 1");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("mac.temperature must be a non-negative temperature");
        }
        if let MacMode::Active { dc_gain } = self.mode {
            if dc_gain.is_nan() || dc_gain <= 0.0 {
                return bad("active mode requires dc_gain > 0");
            }
        }
        Ok(())
    }

    /// Full-scale multiplying capacitance `C_s,tot`.
    pub fn c_s_total(&self) -> f64 {
        self.weight_levels as f64 * self.c_unit
    }

    /// Accumulation capacitor `C2` (the SAR sampling array).
    pub fn c2(&self) -> f64 {
        self.c2_ratio * self.c_s_total()
    }

    /// Signed capacitance selected by a weight code.
    pub fn capacitance(&self, code: i32) -> f64 {
        code as f64 * self.c_unit
    }

    /// Thermal energy `kT` in joules.
    pub fn kt(&self) -> f64 {
        BOLTZMANN * self.temperature
    }

    /// Inclusive weight code range for `weight_bits`.
    pub fn weight_code_range(&self) -> (i32, i32) {
        signed_range(self.weight_bits)
    }

    /// Fraction of the sampled charge left behind on a full-scale `C_s,tot`
    /// after one redistribution.
    pub fn residual_charge_fraction(&self) -> f64 {
        let cs = self.c_s_total();
        cs / (cs + self.c2())
    }
}

pub(crate) fn signed_range(bits: u32) -> (i32, i32) {
    let half = 1i64 << (bits - 1);
    (-half as i32, (half - 1) as i32)
}

/// Per-cycle droop `k` and gain `mu`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleGain {
    pub droop: f64,
    pub gain: f64,
}

impl CycleGain {
    /// Voltage gain applied to the sample of the same cycle, `mu * k`.
    pub fn sample_gain(&self) -> f64 {
        self.gain * self.droop
    }
}

pub fn droop_and_gain(c1: f64, cfg: &MacConfig) -> Result<CycleGain> {
    let c_tot = cfg.c_s_total();
    if !c1.is_finite() || c1.abs() > c_tot {
        return Err(Error::Domain(format!(
            "|C1| = {c1:e} F exceeds C_s,tot = {c_tot:e} F"
        )));
    }
    let c2 = cfg.c2();
    // |C1| loads the shared node regardless of the sampled polarity.
    let load = c1.abs();
    Ok(match cfg.mode {
        MacMode::Passive => CycleGain {
            droop: c2 / (c2 + load),
            gain: c1 / c2,
        },
        MacMode::Active { dc_gain } => {
            let c2_eff = c2 * (dc_gain + 1.0);
            CycleGain {
                droop: c2_eff / (c2_eff + load),
                gain: (c1 / c2) * (dc_gain / (dc_gain + 1.0)),
            }
        }
    })
}

/// Signed weight codes, one row per output.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    codes: DMatrix<i32>,
    bits: u32,
}

impl WeightMatrix {
    pub fn new(codes: DMatrix<i32>, bits: u32) -> Result<Self> {
        if !(1..=31).contains(&bits) {
            return Err(Error::InvalidConfig(format!(
                "weight bits {bits} not in 1..=31"
            )));
        }
        let (lo, hi) = signed_range(bits);
        if let Some(&bad) = codes.iter().find(|&&c| c < lo || c > hi) {
            return Err(Error::CodeOutOfRange {
                value: bad as i64,
                bits,
            });
        }
        Ok(WeightMatrix { codes, bits })
    }

    /// Builds from row-major nested rows.
    pub fn from_rows(rows: &[Vec<i32>], bits: u32) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "weight rows",
                expected: n,
                found: r.len(),
            });
        }
        Self::new(DMatrix::from_fn(m, n, |j, i| rows[j][i]), bits)
    }

    pub fn zeros(rows: usize, cols: usize, bits: u32) -> Result<Self> {
        Self::new(DMatrix::zeros(rows, cols), bits)
    }

    pub fn rows(&self) -> usize {
        self.codes.nrows()
    }

    pub fn cols(&self) -> usize {
        self.codes.ncols()
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn codes(&self) -> &DMatrix<i32> {
        &self.codes
    }

    pub fn row(&self, j: usize) -> Vec<i32> {
        self.codes.row(j).iter().copied().collect()
    }

    /// Codes as reals, the ideal matrix in code units.
    pub fn to_f64(&self) -> DMatrix<f64> {
        self.codes.map(|c| c as f64)
    }

    /// Copy with every row zero-padded on the right to `cols` columns.
    pub fn padded(&self, cols: usize) -> Result<Self> {
        if cols < self.cols() {
            return Err(Error::DimensionMismatch {
                what: "padded weight columns",
                expected: cols,
                found: self.cols(),
            });
        }
        let codes = DMatrix::from_fn(self.rows(), cols, |j, i| {
            if i < self.cols() {
                self.codes[(j, i)]
            } else {
                0
            }
        });
        Ok(WeightMatrix {
            codes,
            bits: self.bits,
        })
    }
}

/// The matrix the analog core actually applies, in volts per volt.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveMatrix {
    values: DMatrix<f64>,
}

impl EffectiveMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Rescaled by `C2 / c_unit` so an ideal core would reproduce the
    /// integer weight codes.
    pub fn in_code_units(&self, cfg: &MacConfig) -> DMatrix<f64> {
        &self.values * (cfg.c2() / cfg.c_unit)
    }

    pub fn row_dot(&self, j: usize, x: &[f64]) -> f64 {
        self.values.row(j).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// Accumulation-capacitor voltages for one inner product; index 0 is the
/// reset state.
#[derive(Clone, Debug, PartialEq)]
pub struct MacTrace {
    pub v_c2: Vec<f64>,
}

impl MacTrace {
    pub fn final_value(&self) -> f64 {
        *self
            .v_c2
            .last()
            .expect("trace holds at least the reset state")
    }

    pub fn cycles(&self) -> usize {
        self.v_c2.len() - 1
    }
}

pub fn effective_matrix(weights: &WeightMatrix, cfg: &MacConfig) -> Result<EffectiveMatrix> {
    let n = cfg.cycles_per_product;
    if weights.cols() != n {
        return Err(Error::DimensionMismatch {
            what: "weight columns vs cycles_per_product",
            expected: n,
            found: weights.cols(),
        });
    }
    let mut values = DMatrix::zeros(weights.rows(), n);
    for j in 0..weights.rows() {
        let mut droop_tail = 1.0;
        for i in (0..n).rev() {
            let g = droop_and_gain(cfg.capacitance(weights.codes[(j, i)]), cfg)?;
            droop_tail *= g.droop;
            values[(j, i)] = g.gain * droop_tail;
        }
    }
    Ok(EffectiveMatrix { values })
}

pub(crate) fn check_row(v_in: &[f64], row_codes: &[i32], cfg: &MacConfig) -> Result<()> {
    let n = cfg.cycles_per_product;
    if v_in.len() != n {
        return Err(Error::DimensionMismatch {
            what: "input length vs cycles_per_product",
            expected: n,
            found: v_in.len(),
        });
    }
    if row_codes.len() != n {
        return Err(Error::DimensionMismatch {
            what: "weight row length vs cycles_per_product",
            expected: n,
            found: row_codes.len(),
        });
    }
    Ok(())
}

pub fn mac_inner_product(v_in: &[f64], row_codes: &[i32], cfg: &MacConfig) -> Result<MacTrace> {
    check_row(v_in, row_codes, cfg)?;
    let mut v_c2 = Vec::with_capacity(v_in.len() + 1);
    let mut v = 0.0;
    v_c2.push(v);
    for (&vin, &code) in v_in.iter().zip(row_codes) {
        let g = droop_and_gain(cfg.capacitance(code), cfg)?;
        v = g.droop * v + g.sample_gain() * vin;
        v_c2.push(v);
    }
    Ok(MacTrace { v_c2 })
}

/// One independent pass per weight row; the accumulator is reset between rows.
pub fn matrix_multiply(x: &[f64], weights: &WeightMatrix, cfg: &MacConfig) -> Result<Vec<f64>> {
    if weights.rows() > 0 && weights.cols() != x.len() {
        return Err(Error::DimensionMismatch {
            what: "weight columns vs input length",
            expected: weights.cols(),
            found: x.len(),
        });
    }
    (0..weights.rows())
        .map(|j| mac_inner_product(x, &weights.row(j), cfg).map(|t| t.final_value()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg_n(n: usize) -> MacConfig {
        MacConfig {
            cycles_per_product: n,
            ..MacConfig::default()
        }
    }

    // Charge-conservation oracle for the passive core: the sampled charge
    // C1*Vin and the held charge C2*V share a node of capacitance C2+|C1|.
    fn passive_charge_sharing(v_in: &[f64], codes: &[i32], cfg: &MacConfig) -> f64 {
        let c2 = cfg.c2();
        let mut v = 0.0;
        for (&vin, &code) in v_in.iter().zip(codes) {
            let c1 = code as f64 * cfg.c_unit;
            v = (c2 * v + c1 * vin) / (c2 + c1.abs());
        }
        v
    }

    #[test]
    fn zero_cap_has_no_droop() {
        let g = droop_and_gain(0.0, &MacConfig::default()).unwrap();
        assert_eq!(g.droop, 1.0);
        assert_eq!(g.gain, 0.0);
    }

    #[test]
    fn equal_caps_halve_the_charge() {
        let cfg = MacConfig {
            c2_ratio: 1.0,
            ..MacConfig::default()
        };
        let g = droop_and_gain(cfg.c2(), &cfg).unwrap();
        assert_relative_eq!(g.droop, 0.5, max_relative = 1e-15);
        assert_relative_eq!(g.gain, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn full_scale_passive_droop() {
        let cfg = MacConfig::default();
        let g = droop_and_gain(cfg.c_s_total(), &cfg).unwrap();
        assert_relative_eq!(g.droop, 39.0 / 40.0, max_relative = 1e-15);
        assert_relative_eq!(g.gain, 1.0 / 39.0, max_relative = 1e-15);
    }

    #[test]
    fn ideal_amplifier_limit() {
        let cfg = MacConfig {
            mode: MacMode::Active { dc_gain: 1e15 },
            ..MacConfig::default()
        };
        let c1 = cfg.c_s_total();
        let g = droop_and_gain(c1, &cfg).unwrap();
        assert_relative_eq!(g.droop, 1.0, max_relative = 1e-12);
        assert_relative_eq!(g.gain, c1 / cfg.c2(), max_relative = 1e-12);
    }

    #[test]
    fn oversized_cap_is_a_domain_error() {
        let cfg = MacConfig::default();
        assert!(matches!(
            droop_and_gain(cfg.c_s_total() * 1.01, &cfg),
            Err(Error::Domain(_))
        ));
        assert!(droop_and_gain(f64::NAN, &cfg).is_err());
    }

    #[test]
    fn negative_code_keeps_sign_in_gain_only() {
        let cfg = MacConfig::default();
        let p = droop_and_gain(cfg.capacitance(3), &cfg).unwrap();
        let n = droop_and_gain(cfg.capacitance(-3), &cfg).unwrap();
        assert_eq!(p.droop, n.droop);
        assert_eq!(p.gain, -n.gain);
    }

    #[test]
    fn zero_weights_give_zero_matrix() {
        let cfg = cfg_n(64);
        let w = WeightMatrix::zeros(8, 64, 3).unwrap();
        let e = effective_matrix(&w, &cfg).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_cycle_matrix_is_sample_gain() {
        let cfg = cfg_n(1);
        let w = WeightMatrix::from_rows(&[vec![-3]], 3).unwrap();
        let e = effective_matrix(&w, &cfg).unwrap();
        let g = droop_and_gain(cfg.capacitance(-3), &cfg).unwrap();
        assert_eq!(e.values()[(0, 0)], g.gain * g.droop);
    }

    #[test]
    fn high_gain_active_matches_ideal_ratio() {
        let cfg = MacConfig {
            mode: MacMode::Active { dc_gain: 1e9 },
            ..MacConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<i32>> = (0..8)
            .map(|_| (0..64).map(|_| rng.random_range(-4..=3)).collect())
            .collect();
        let w = WeightMatrix::from_rows(&rows, 3).unwrap();
        let e = effective_matrix(&w, &cfg).unwrap();
        for (j, row) in rows.iter().enumerate() {
            for (i, &code) in row.iter().enumerate() {
                let ideal = cfg.capacitance(code) / cfg.c2();
                let got = e.values()[(j, i)];
                assert!(
                    (got - ideal).abs() <= 1e-8 * ideal.abs(),
                    "({j},{i}): {got} vs {ideal}"
                );
            }
        }
    }

    #[test]
    fn weight_range_is_enforced() {
        assert!(matches!(
            WeightMatrix::from_rows(&[vec![4]], 3),
            Err(Error::CodeOutOfRange { value: 4, bits: 3 })
        ));
        assert!(WeightMatrix::from_rows(&[vec![-4, 3]], 3).is_ok());
        assert!(WeightMatrix::from_rows(&[vec![1, 2], vec![1]], 3).is_err());
    }

    #[test]
    fn zero_input_trace_is_zero() {
        let cfg = cfg_n(64);
        let t = mac_inner_product(&[0.0; 64], &[3; 64], &cfg).unwrap();
        assert_eq!(t.v_c2.len(), 65);
        assert!(t.v_c2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_cycle_hand_unrolled() {
        let cfg = cfg_n(2);
        let vin = [0.1, -0.05];
        let t = mac_inner_product(&vin, &[2, 0], &cfg).unwrap();
        let g1 = droop_and_gain(cfg.capacitance(2), &cfg).unwrap();
        assert_relative_eq!(t.v_c2[1], g1.gain * g1.droop * 0.1, max_relative = 1e-15);
        // second cycle: k2 = 1, mu2 = 0
        assert_eq!(t.v_c2[2], t.v_c2[1]);
    }

    #[test]
    fn recurrence_matches_charge_conservation_and_matrix() {
        let cfg = cfg_n(64);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let codes: Vec<i32> = (0..64).map(|_| rng.random_range(-4..=3)).collect();
            let vin: Vec<f64> = (0..64).map(|_| rng.random_range(-0.224..0.224)).collect();
            let t = mac_inner_product(&vin, &codes, &cfg).unwrap();
            let oracle = passive_charge_sharing(&vin, &codes, &cfg);
            assert!((t.final_value() - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));

            let w = WeightMatrix::from_rows(&[codes], 3).unwrap();
            let dot = effective_matrix(&w, &cfg).unwrap().row_dot(0, &vin);
            assert!((t.final_value() - dot).abs() <= 1e-12 * dot.abs().max(1.0));
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let cfg = cfg_n(4);
        assert!(matches!(
            mac_inner_product(&[0.0; 3], &[0; 4], &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        let w = WeightMatrix::zeros(2, 5, 3).unwrap();
        assert!(effective_matrix(&w, &cfg).is_err());
        assert!(matrix_multiply(&[0.0; 4], &w, &cfg).is_err());
    }

    #[test]
    fn empty_matrix_gives_empty_output() {
        let cfg = cfg_n(4);
        let w = WeightMatrix::zeros(0, 4, 3).unwrap();
        assert!(matrix_multiply(&[1.0; 4], &w, &cfg).unwrap().is_empty());
    }

    #[test]
    fn no_droop_limit_is_ideal_dot_product() {
        let cfg = MacConfig {
            c2_ratio: 1e9,
            cycles_per_product: 8,
            ..MacConfig::default()
        };
        let codes = vec![3, -2, 1, 0, -4, 2, 2, -1];
        let x = [0.01, 0.02, -0.03, 0.04, 0.05, -0.06, 0.07, 0.08];
        let w = WeightMatrix::from_rows(std::slice::from_ref(&codes), 3).unwrap();
        let y = matrix_multiply(&x, &w, &cfg).unwrap();
        let ideal: f64 = codes
            .iter()
            .zip(&x)
            .map(|(&c, &v)| cfg.capacitance(c) / cfg.c2() * v)
            .sum();
        assert_relative_eq!(y[0], ideal, max_relative = 1e-7);
    }

    #[test]
    fn active_gain_matching_passive() {
        let base = MacConfig::default();
        for code in 1..=4 {
            let c1 = base.capacitance(code);
            let passive = droop_and_gain(c1, &base).unwrap();
            let active = MacConfig {
                mode: MacMode::Active {
                    dc_gain: base.c2() / c1 + 1.0,
                },
                ..base.clone()
            };
            let a = droop_and_gain(c1, &active).unwrap();
            assert_relative_eq!(a.sample_gain(), passive.sample_gain(), max_relative = 1e-13);
        }
    }

    #[test]
    fn residual_fraction_within_bound() {
        let f = MacConfig::default().residual_charge_fraction();
        assert_relative_eq!(f, 1.0 / 40.0, max_relative = 1e-15);
        assert!(f <= 0.027);
    }
}
