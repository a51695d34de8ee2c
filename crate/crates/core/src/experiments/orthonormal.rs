//! Orthonormal-row product test.
//!
//! `A` holds `rows` orthonormal rows of length 64 and each trial feeds one
//! of those rows back as the input, so the ideal response grid is the
//! identity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{mse, Artifact, Outcome};
use crate::basis::{orthonormal_rows, BasisKind};
use crate::calibration::{solve_correction, FeasibleSet};
use crate::config::RunConfig;
use crate::error::Result;
use crate::io::Table;
use crate::pipeline::{Fidelity, Pipeline, ProgrammedMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrthonormalParams {
    pub basis: BasisKind,
    pub rows: usize,
    pub calibrate: bool,
    pub fidelity: Fidelity,
}

impl Default for OrthonormalParams {
    fn default() -> Self {
        OrthonormalParams {
            basis: BasisKind::Dct,
            rows: 8,
            calibrate: true,
            fidelity: Fidelity::Simulated,
        }
    }
}

/// Response grids are indexed `(channel, trial)`.
#[derive(Clone, Debug)]
pub struct OrthonormalResult {
    pub ideal: DMatrix<f64>,
    pub response: DMatrix<f64>,
    /// Response scaled by the least-squares scalar against the identity.
    pub normalized: DMatrix<f64>,
    pub gain: f64,
    pub calibrated: Option<DMatrix<f64>>,
    pub b: Option<DMatrix<f64>>,
}

impl OrthonormalResult {
    pub fn target(&self) -> DMatrix<f64> {
        DMatrix::identity(self.response.nrows(), self.response.ncols())
    }

    pub fn mse_raw(&self) -> f64 {
        mse(&self.response, &self.target())
    }

    pub fn mse_uncalibrated(&self) -> f64 {
        mse(&self.normalized, &self.target())
    }

    pub fn mse_calibrated(&self) -> Option<f64> {
        self.calibrated.as_ref().map(|c| mse(c, &self.target()))
    }

    /// Whether every trial's largest response lands on its own channel.
    pub fn argmax_on_diagonal(&self) -> bool {
        (0..self.response.ncols()).all(|i| {
            let col = self.response.column(i);
            col.imax() == i
        })
    }
}

pub fn orthonormal_product_test(
    kind: BasisKind,
    rows: usize,
    pipe: &Pipeline,
    with_calibration: bool,
) -> Result<OrthonormalResult> {
    let n = pipe.cycles();
    let a = orthonormal_rows(kind, rows, n)?;
    let prog = ProgrammedMatrix::quantize(&a, pipe.mac.weight_bits)?;
    let mut response = DMatrix::zeros(rows, rows);
    for i in 0..rows {
        let x: Vec<f64> = a.row(i).iter().copied().collect();
        let y = pipe.matvec(&prog, &x, i as u64)?;
        response.set_column(i, &nalgebra::DVector::from_vec(y));
    }
    let ideal = DMatrix::identity(rows, rows);
    let denom = response.norm_squared();
    let gain = if denom > 0.0 {
        response.dot(&ideal) / denom
    } else {
        1.0
    };
    let normalized = &response * gain;

    let (calibrated, b) = if with_calibration && pipe.fidelity == Fidelity::Simulated {
        let actual = prog.effective_real(pipe)?;
        let cal = solve_correction(&a, &actual, FeasibleSet::Unconstrained)?;
        (Some(&cal.b * &response), Some(cal.b))
    } else if with_calibration {
        (Some(response.clone()), Some(DMatrix::identity(rows, rows)))
    } else {
        (None, None)
    };
    Ok(OrthonormalResult {
        ideal,
        response,
        normalized,
        gain,
        calibrated,
        b,
    })
}

pub(crate) fn run(cfg: &RunConfig) -> Result<Outcome> {
    let p = &cfg.orthonormal;
    let pipe = cfg.pipeline()?.with_fidelity(p.fidelity);
    let r = orthonormal_product_test(p.basis, p.rows, &pipe, p.calibrate)?;

    let mut out = Outcome::default();
    out.metric("mse_raw", r.mse_raw());
    out.metric("mse_uncalibrated", r.mse_uncalibrated());
    out.metric("normalization_gain", r.gain);
    out.flag("argmax_on_diagonal", r.argmax_on_diagonal());
    if let Some(m) = r.mse_calibrated() {
        out.metric("mse_calibrated", m);
    }

    let mut t = Table::new(&[
        "trial",
        "channel",
        "ideal",
        "response",
        "normalized",
        "calibrated",
    ]);
    for i in 0..r.response.ncols() {
        for j in 0..r.response.nrows() {
            let cal = r
                .calibrated
                .as_ref()
                .map_or(String::new(), |c| c[(j, i)].to_string());
            t.push([
                i.to_string(),
                j.to_string(),
                r.ideal[(j, i)].to_string(),
                r.response[(j, i)].to_string(),
                r.normalized[(j, i)].to_string(),
                cal,
            ]);
        }
    }
    out.artifacts.push(Artifact::table("response.csv", &t));
    if let Some(b) = &r.b {
        out.artifacts.push(Artifact::matrix("correction.csv", b));
    }
    Ok(out)
}
