//! Desk-scale characterization experiments.
//!
//! Each experiment produces named scalar metrics and a set of CSV artifacts.
//! [`run`] writes them, together with `report.json`, into the output
//! directory. Reports depend only on the resolved configuration and seed.

pub mod calibration_sweep;
pub mod compression;
pub mod filter_scan;
pub mod matched_filter;
pub mod noise_mc;
pub mod orthonormal;
pub mod sgd;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{matrix_to_csv_string, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Orthonormal,
    MatchedFilter,
    FilterScan,
    CompressionLayer,
    SgdOffload,
    NoiseMc,
    CalibrationSweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Orthonormal,
        ExperimentKind::MatchedFilter,
        ExperimentKind::FilterScan,
        ExperimentKind::CompressionLayer,
        ExperimentKind::SgdOffload,
        ExperimentKind::NoiseMc,
        ExperimentKind::CalibrationSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Orthonormal => "orthonormal",
            ExperimentKind::MatchedFilter => "matched-filter",
            ExperimentKind::FilterScan => "filter-scan",
            ExperimentKind::CompressionLayer => "compression-layer",
            ExperimentKind::SgdOffload => "sgd-offload",
            ExperimentKind::NoiseMc => "noise-mc",
            ExperimentKind::CalibrationSweep => "calibration-sweep",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::Orthonormal => {
                "8x64 orthonormal-row products through DAC, MAC and ADC, with optional calibration"
            }
            ExperimentKind::MatchedFilter => {
                "chirp matched filter; output mean and variance versus input SNR"
            }
            ExperimentKind::FilterScan => {
                "Gabor filter scanned over an image; analog versus 6b/3b/6b digital references"
            }
            ExperimentKind::CompressionLayer => {
                "32x32x3 to 4x4x9 compressing front layer with A/D conversion counters"
            }
            ExperimentKind::SgdOffload => {
                "least-squares SGD with gradients computed through the simulated pipeline"
            }
            ExperimentKind::NoiseMc => "Monte Carlo kT/C noise on the accumulation capacitor",
            ExperimentKind::CalibrationSweep => {
                "factorization error versus rows, accentuated-droop matrices, running sums"
            }
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|k| k.name()).collect()
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownExperiment(pub String);

impl fmt::Display for UnknownExperiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unknown experiment `{}`; valid names: {}",
            self.0,
            ExperimentKind::names().join(", ")
        )
    }
}

impl std::error::Error for UnknownExperiment {}

impl FromStr for ExperimentKind {
    type Err = UnknownExperiment;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownExperiment(s.to_string()))
    }
}

/// A named CSV file produced by an experiment.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn table(name: &str, t: &Table) -> Self {
        Artifact {
            name: name.to_string(),
            contents: t.to_csv_string(),
        }
    }

    pub fn matrix(name: &str, m: &DMatrix<f64>) -> Self {
        Artifact {
            name: name.to_string(),
            contents: matrix_to_csv_string(m),
        }
    }
}

/// What an experiment hands back to the runner.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub metrics: BTreeMap<String, f64>,
    pub artifacts: Vec<Artifact>,
}

impl Outcome {
    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn flag(&mut self, name: &str, value: bool) {
        self.metric(name, if value { 1.0 } else { 0.0 });
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub rng_seed: u64,
    pub config: serde_json::Value,
    pub metrics: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Runs one experiment in memory.
pub fn execute(kind: ExperimentKind, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let outcome = match kind {
        ExperimentKind::Orthonormal => orthonormal::run(cfg),
        ExperimentKind::MatchedFilter => matched_filter::run(cfg),
        ExperimentKind::FilterScan => filter_scan::run(cfg),
        ExperimentKind::CompressionLayer => compression::run(cfg),
        ExperimentKind::SgdOffload => sgd::run(cfg),
        ExperimentKind::NoiseMc => noise_mc::run(cfg),
        ExperimentKind::CalibrationSweep => calibration_sweep::run(cfg),
    }?;
    if let Some((k, v)) = outcome.metrics.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("metric {k} = {v}")));
    }
    Ok(outcome)
}

/// Runs one experiment and writes `report.json` plus its CSVs into `out_dir`.
pub fn run(kind: ExperimentKind, cfg: &RunConfig, out_dir: &Path) -> Result<ExperimentReport> {
    let outcome = execute(kind, cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut artifacts = Vec::with_capacity(outcome.artifacts.len());
    for a in &outcome.artifacts {
        let path = out_dir.join(&a.name);
        fs::write(&path, &a.contents).map_err(|e| Error::io(&path, e))?;
        artifacts.push(a.name.clone());
    }
    let mut snapshot_cfg = cfg.clone();
    snapshot_cfg.experiment = Some(kind.name().to_string());
    let report = ExperimentReport {
        name: kind.name().to_string(),
        rng_seed: cfg.seed,
        config: snapshot_cfg.snapshot(),
        metrics: outcome.metrics,
        artifacts,
    };
    let path = out_dir.join("report.json");
    fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Mean squared entrywise difference.
pub fn mse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a - b).norm_squared() / a.len() as f64
}

/// `||estimate - reference||^2 / ||reference||^2`, zero when both vanish.
pub fn nmse(estimate: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let err = (estimate - reference).norm_squared();
    if err == 0.0 {
        return 0.0;
    }
    err / reference.norm_squared()
}

/// 8x8 Gabor-like kernel normalized to unit peak magnitude.
pub fn gabor_kernel(
    size: usize,
    theta: f64,
    wavelength: f64,
    sigma: f64,
    phase: f64,
) -> DMatrix<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g = DMatrix::from_fn(size, size, |r, col| {
        let x = col as f64 - c;
        let y = r as f64 - c;
        let xr = x * theta.cos() + y * theta.sin();
        let yr = -x * theta.sin() + y * theta.cos();
        let envelope = (-(xr * xr + 0.5 * 0.5 * yr * yr) / (2.0 * sigma * sigma)).exp();
        envelope * (2.0 * std::f64::consts::PI * xr / wavelength + phase).cos()
    });
    let peak = g.abs().max();
    if peak > 0.0 {
        g / peak
    } else {
        g
    }
}

/// Row-major flattening.
pub(crate) fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows())
        .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
        .map(|(r, c)| m[(r, c)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_round_trips_names() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        let err = "nope".parse::<ExperimentKind>().unwrap_err().to_string();
        assert!(err.contains("orthonormal") && err.contains("calibration-sweep"));
    }

    #[test]
    fn nmse_edge_cases() {
        let z = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(nmse(&z, &z), 0.0);
        let r = DMatrix::from_element(2, 2, 2.0);
        assert!((nmse(&(&r * 1.1), &r) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn gabor_is_unit_peak() {
        let g = gabor_kernel(8, 0.4, 4.0, 2.0, 0.0);
        assert!((g.abs().max() - 1.0).abs() < 1e-15);
        assert_eq!(flatten(&g).len(), 64);
    }
}
