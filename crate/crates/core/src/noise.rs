//! kT/C noise on the accumulation capacitor.
//!
//! Every cycle two sampled noise packets reach `C_ASAR`: the charge frozen on
//! the multiplying capacitor when the sampling switch opens, and the charge
//! frozen on the series combination of `C_s,tot` and `C_ASAR` when the
//! redistribution switch opens. Earlier packets decay with the same
//! redistribution ratio as the signal, so the variance is a geometric sum
//! that saturates at `kT / C_ASAR`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charge::{check_row, droop_and_gain, mac_inner_product, MacConfig, MacTrace};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub enabled: bool,
    /// Filled from the run seed; not read from config files.
    #[serde(skip)]
    pub rng_seed: u64,
    pub trials: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            enabled: true,
            rng_seed: 0,
            trials: 10_000,
        }
    }
}

impl NoiseSpec {
    pub fn disabled() -> Self {
        NoiseSpec {
            enabled: false,
            ..NoiseSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::InvalidConfig(
                "noise.trials must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Generator for one independent stream of `seed`.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Folds a tuple of indices into a single stream id.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |acc, &p| {
        let mut z = (acc ^ p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

/// Voltage variance injected on `C_ASAR` by one sample/redistribute cycle
/// with multiplying capacitance `c_s`.
pub fn per_cycle_variance(c_s: f64, cfg: &MacConfig) -> f64 {
    let kt = cfg.kt();
    let cs_tot = cfg.c_s_total();
    let ca = cfg.c2();
    let series = cs_tot * ca / (cs_tot + ca);
    kt * c_s.abs() / (cs_tot + ca).powi(2) + kt * series / (ca * ca)
}

/// `sum_{j=0}^{i} r^{2j}` with `r = C_ASAR / (C_ASAR + C_s,tot)`.
fn decay_sum(i: u64, cfg: &MacConfig) -> f64 {
    let cs = cfg.c_s_total();
    let ca = cfg.c2();
    // 1 - r^2 without cancellation
    let one_minus_r2 = cs * (cs + 2.0 * ca) / (cs + ca).powi(2);
    let ln_r = -(cs / ca).ln_1p();
    let terms = (i as f64) + 1.0;
    -(2.0 * terms * ln_r).exp_m1() / one_minus_r2
}

/// RMS noise voltage on `C_ASAR` after `i` cycles at constant `c_s`.
///
/// Cycle counts past `cycles_per_product` are accepted; they describe a
/// longer accumulation and converge to [`steady_state_sigma`].
pub fn sigma_after_cycles(i: u64, c_s: f64, cfg: &MacConfig) -> Result<f64> {
    if !c_s.is_finite() || c_s < 0.0 {
        return Err(Error::Domain(format!(
            "capacitance {c_s:e} F must be non-negative"
        )));
    }
    if c_s > cfg.c_s_total() {
        return Err(Error::Domain(format!(
            "capacitance {c_s:e} F exceeds C_s,tot = {:e} F",
            cfg.c_s_total()
        )));
    }
    Ok((per_cycle_variance(c_s, cfg) * decay_sum(i, cfg)).sqrt())
}

/// `sqrt(kT / C_ASAR)`.
pub fn steady_state_sigma(cfg: &MacConfig) -> f64 {
    (cfg.kt() / cfg.c2()).sqrt()
}

/// One noisy sample path of an inner product. `trial` selects the
/// independent random stream.
pub fn noisy_mac_inner_product(
    v_in: &[f64],
    row_codes: &[i32],
    cfg: &MacConfig,
    spec: &NoiseSpec,
    trial: u64,
) -> Result<MacTrace> {
    if !spec.enabled {
        return mac_inner_product(v_in, row_codes, cfg);
    }
    check_row(v_in, row_codes, cfg)?;
    let mut rng = trial_rng(spec.rng_seed, trial);
    let mut v_c2 = Vec::with_capacity(v_in.len() + 1);
    let mut v = 0.0;
    v_c2.push(v);
    for (&vin, &code) in v_in.iter().zip(row_codes) {
        let c1 = cfg.capacitance(code);
        let g = droop_and_gain(c1, cfg)?;
        let z: f64 = StandardNormal.sample(&mut rng);
        v = g.droop * v + g.sample_gain() * vin + per_cycle_variance(c1, cfg).sqrt() * z;
        v_c2.push(v);
    }
    Ok(MacTrace { v_c2 })
}

/// `spec.trials` independent sample paths, trial `t` on stream `t`.
pub fn monte_carlo(
    v_in: &[f64],
    row_codes: &[i32],
    cfg: &MacConfig,
    spec: &NoiseSpec,
) -> Result<Vec<MacTrace>> {
    (0..spec.trials as u64)
        .into_par_iter()
        .map(|t| noisy_mac_inner_product(v_in, row_codes, cfg, spec, t))
        .collect()
}

/// Per-cycle sample mean and standard deviation across traces.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn cycle_statistics(traces: &[MacTrace]) -> CycleStats {
    let Some(first) = traces.first() else {
        return CycleStats {
            mean: Vec::new(),
            std: Vec::new(),
        };
    };
    let len = first.v_c2.len();
    let n = traces.len() as f64;
    let mut mean = vec![0.0; len];
    for t in traces {
        for (m, v) in mean.iter_mut().zip(&t.v_c2) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; len];
    for t in traces {
        for ((s, v), m) in var.iter_mut().zip(&t.v_c2).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let denom = (n - 1.0).max(1.0);
    let std = var.into_iter().map(|s| (s / denom).sqrt()).collect();
    CycleStats { mean, std }
}
