//! Matched filter against a noisy chirp.
//!
//! A single 64-tap inner product `y = sum a[i] x[i]` with `x = a + n`. The
//! template `a` is programmed as 3-bit weights; `x` arrives as an analog
//! voltage and is resampled by the 6-bit input DAC. White Gaussian noise is
//! added before the DAC.
//!
//! Trial `t` uses the same unit-variance noise draw and the same kT/C stream
//! at every SNR point, so the sweep isolates the effect of the input noise
//! level.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Artifact, Outcome};
use crate::config::RunConfig;
use crate::converters::{dac_decode, dac_encode};
use crate::error::{Error, Result};
use crate::io::Table;
use crate::noise::{stream_id, trial_rng};
use crate::pipeline::{Pipeline, ProgrammedMatrix};

const INPUT_NOISE_STREAM: u64 = 0x0049_4e50_5554;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchedFilterParams {
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub chirp_len: usize,
    /// Final normalized frequency of the linear chirp (starts at 0).
    pub f_end: f64,
    /// Chirp amplitude as a fraction of the DAC full scale.
    pub amplitude: f64,
}

impl Default for MatchedFilterParams {
    fn default() -> Self {
        MatchedFilterParams {
            snr_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 30.0],
            trials: 25,
            chirp_len: 64,
            f_end: 0.4,
            amplitude: 0.7,
        }
    }
}

/// `amplitude * cos(2 pi (f_end / 2N) i^2)`, sweeping 0 to `f_end`.
pub fn linear_chirp(len: usize, f_end: f64, amplitude: f64) -> Vec<f64> {
    let n = len as f64;
    (0..len)
        .map(|i| {
            let t = i as f64;
            amplitude * (2.0 * std::f64::consts::PI * f_end * t * t / (2.0 * n)).cos()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnrPoint {
    /// `None` for the noiseless reference run.
    pub snr_db: Option<f64>,
    pub codes: Vec<i32>,
}

impl SnrPoint {
    pub fn mean_code(&self) -> f64 {
        self.codes.iter().map(|&c| c as f64).sum::<f64>() / self.codes.len() as f64
    }

    /// Unbiased sample variance in codes squared.
    pub fn var_code(&self) -> f64 {
        let n = self.codes.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean_code();
        self.codes
            .iter()
            .map(|&c| (c as f64 - m).powi(2))
            .sum::<f64>()
            / (n - 1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct MatchedFilterResult {
    pub points: Vec<SnrPoint>,
    pub floor: SnrPoint,
    pub lsb: f64,
}

impl MatchedFilterResult {
    /// Variances in order of increasing SNR.
    pub fn variances_by_snr(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self
            .points
            .iter()
            .map(|p| (p.snr_db.unwrap_or(f64::INFINITY), p.var_code()))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    pub fn variance_non_increasing(&self) -> bool {
        self.variances_by_snr().windows(2).all(|w| w[1].1 <= w[0].1)
    }

    /// Lowest SNR from which the variance stays within one LSB's uniform
    /// quantization power (1/12 code^2).
    pub fn knee_snr_db(&self) -> Option<f64> {
        let v = self.variances_by_snr();
        let mut knee = None;
        for &(snr, var) in v.iter().rev() {
            if var <= 1.0 / 12.0 {
                knee = Some(snr);
            } else {
                break;
            }
        }
        knee
    }
}

pub fn matched_filter_sweep(
    params: &MatchedFilterParams,
    pipe: &Pipeline,
    input_seed: u64,
) -> Result<MatchedFilterResult> {
    if params.snr_db.is_empty() {
        return Err(Error::InvalidConfig(
            "matched_filter.snr_db must not be empty".into(),
        ));
    }
    if params.trials < 1 {
        return Err(Error::InvalidConfig(
            "matched_filter.trials must be at least 1".into(),
        ));
    }
    if params.chirp_len == 0 || params.chirp_len > pipe.cycles() {
        return Err(Error::DimensionMismatch {
            what: "chirp length vs cycles_per_product",
            expected: pipe.cycles(),
            found: params.chirp_len,
        });
    }
    let chirp = linear_chirp(
        params.chirp_len,
        params.f_end,
        params.amplitude * pipe.dac.v_full_scale,
    );
    let power = chirp.iter().map(|a| a * a).sum::<f64>() / chirp.len() as f64;
    let template = nalgebra::DMatrix::from_row_slice(1, chirp.len(), &chirp);
    let prog = ProgrammedMatrix::quantize(&template, pipe.mac.weight_bits)?;

    let run_point = |sigma: f64| -> Result<Vec<i32>> {
        (0..params.trials as u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(input_seed, stream_id(&[INPUT_NOISE_STREAM, t]));
                let v: Vec<f64> = chirp
                    .iter()
                    .map(|&a| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        dac_decode(dac_encode(a + sigma * z, &pipe.dac), &pipe.dac)
                    })
                    .collect::<Result<_>>()?;
                Ok(pipe.run_voltages(prog.codes(), &v, t)?[0].value())
            })
            .collect()
    };

    let points = params
        .snr_db
        .iter()
        .map(|&snr| {
            let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
            Ok(SnrPoint {
                snr_db: Some(snr),
                codes: run_point(sigma)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let floor = SnrPoint {
        snr_db: None,
        codes: run_point(0.0)?,
    };
    Ok(MatchedFilterResult {
        points,
        floor,
        lsb: pipe.adc.lsb,
    })
}

pub(crate) fn run(cfg: &RunConfig) -> Result<Outcome> {
    let pipe = cfg.pipeline()?;
    let r = matched_filter_sweep(&cfg.matched_filter, &pipe, cfg.seed)?;
    let lsb = r.lsb;

    let mut trials = Table::new(&["snr_db", "trial", "code", "output_v"]);
    let mut summary = Table::new(&["snr_db", "mean_code", "var_code", "mean_v", "var_v"]);
    for p in &r.points {
        let snr = p.snr_db.expect("sweep points carry an SNR");
        for (t, &c) in p.codes.iter().enumerate() {
            trials.push([
                snr.to_string(),
                t.to_string(),
                c.to_string(),
                (c as f64 * lsb).to_string(),
            ]);
        }
        summary.push([
            snr,
            p.mean_code(),
            p.var_code(),
            p.mean_code() * lsb,
            p.var_code() * lsb * lsb,
        ]);
    }

    let mut out = Outcome::default();
    for p in &r.points {
        let snr = p.snr_db.expect("sweep points carry an SNR");
        out.metric(&format!("var_code_at_{snr}db"), p.var_code());
        out.metric(&format!("mean_code_at_{snr}db"), p.mean_code());
    }
    out.metric("floor_var_code", r.floor.var_code());
    out.metric("floor_mean_code", r.floor.mean_code());
    out.flag("variance_non_increasing", r.variance_non_increasing());
    if let Some(k) = r.knee_snr_db() {
        out.metric("knee_snr_db", k);
    }
    out.artifacts.push(Artifact::table("trials.csv", &trials));
    out.artifacts.push(Artifact::table("summary.csv", &summary));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chirp_starts_at_peak_and_stays_bounded() {
        let c = linear_chirp(64, 0.4, 0.5);
        assert_eq!(c[0], 0.5);
        assert!(c.iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn variance_helpers() {
        let p = SnrPoint {
            snr_db: Some(0.0),
            codes: vec![1, 2, 3, 4],
        };
        assert_eq!(p.mean_code(), 2.5);
        assert!((p.var_code() - 5.0 / 3.0).abs() < 1e-12);
    }
}
