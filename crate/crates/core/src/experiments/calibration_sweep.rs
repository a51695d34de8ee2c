//! Factorization error versus row count, an accentuated-droop matrix
//! comparison and running sums of a correlated channel against
//! uncorrelated ones.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Artifact, Outcome};
use crate::basis::{orthonormal_rows, BasisKind};
use crate::calibration::{
    accentuated_matrix_demo, error_vs_rows_sweep, solve_correction, FeasibleSet,
};
use crate::charge::mac_inner_product;
use crate::config::RunConfig;
use crate::converters::dac_decode;
use crate::error::{Error, Result};
use crate::io::Table;
use crate::pipeline::{quantize_vector, Pipeline, ProgrammedMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSweepParams {
    pub basis: BasisKind,
    pub m_list: Vec<usize>,
    /// Accumulator ratio for the exaggerated-droop comparison.
    pub demo_c2_ratio: f64,
    /// Basis row fed back as the input of the running-sum demo.
    pub signal_row: usize,
    /// Target rows of the running-sum correction.
    pub corrected_rows: usize,
    /// Channels written to `running_sums.csv`, starting at the signal row.
    pub channels_to_emit: usize,
}

impl Default for CalibrationSweepParams {
    fn default() -> Self {
        CalibrationSweepParams {
            basis: BasisKind::Dct,
            m_list: vec![1, 2, 4, 8, 16, 32, 64],
            demo_c2_ratio: 10.0,
            signal_row: 5,
            corrected_rows: 8,
            channels_to_emit: 3,
        }
    }
}

/// Per-cycle accumulator voltages, `(channel, cycle)`.
#[derive(Clone, Debug)]
pub struct RunningSums {
    pub ideal: DMatrix<f64>,
    pub passive: DMatrix<f64>,
    /// Passive sums scaled so the signal channel's final value matches ideal.
    pub normalized: DMatrix<f64>,
    /// `B` applied to the passive sums of all channels; exact only at the
    /// final cycle, where `B` was fitted.
    pub corrected: DMatrix<f64>,
    pub signal_channel: usize,
}

impl RunningSums {
    pub fn final_column(m: &DMatrix<f64>) -> DVector<f64> {
        m.column(m.ncols() - 1).into_owned()
    }
}

/// Runs every row of a square basis against one of its own rows.
/// Channel `k` of the outputs is basis row `(signal_row + k) mod n`, so
/// channel 0 is the correlated one.
pub fn running_sums(
    kind: BasisKind,
    signal_row: usize,
    corrected_rows: usize,
    pipe: &Pipeline,
) -> Result<RunningSums> {
    let n = pipe.cycles();
    if signal_row >= n || corrected_rows == 0 || corrected_rows > n {
        return Err(Error::InvalidConfig(format!(
            "signal_row must be below {n} and corrected_rows in 1..={n}"
        )));
    }
    let basis = orthonormal_rows(kind, n, n)?;
    let a = DMatrix::from_fn(n, n, |k, i| basis[((signal_row + k) % n, i)]);
    let prog = ProgrammedMatrix::quantize(&a, pipe.mac.weight_bits)?;
    let x: Vec<f64> = a.row(0).iter().copied().collect();
    let (codes, _) = quantize_vector(&x, pipe.dac.bits);
    let v: Vec<f64> = codes
        .iter()
        .map(|&c| dac_decode(c, &pipe.dac))
        .collect::<Result<_>>()?;

    let c2 = pipe.mac.c2();
    let mut ideal = DMatrix::zeros(n, n + 1);
    let mut passive = DMatrix::zeros(n, n + 1);
    for k in 0..n {
        let row = prog.codes().row(k);
        let trace = mac_inner_product(&v, &row, &pipe.mac)?;
        let mut acc = 0.0;
        for i in 0..=n {
            if i > 0 {
                acc += pipe.mac.capacitance(row[i - 1]) / c2 * v[i - 1];
            }
            ideal[(k, i)] = acc;
            passive[(k, i)] = trace.v_c2[i];
        }
    }
    let gain = ideal[(0, n)] / passive[(0, n)];
    let normalized = &passive * gain;

    // Both sides in code units share the C_unit / C2 factor of the sums.
    let code_ideal = prog.codes().to_f64().rows(0, corrected_rows).into_owned();
    let code_actual = pipe.effective(prog.codes())?.in_code_units(&pipe.mac);
    let b = solve_correction(&code_ideal, &code_actual, FeasibleSet::Unconstrained)?.b;
    let corrected = &b * &passive;
    Ok(RunningSums {
        ideal,
        passive,
        normalized,
        corrected,
        signal_channel: 0,
    })
}

pub(crate) fn run(cfg: &RunConfig) -> Result<Outcome> {
    let p = &cfg.calibration_sweep;
    let pipe = cfg.pipeline()?;
    let n = pipe.cycles();
    let mut out = Outcome::default();

    let target = orthonormal_rows(p.basis, n, n)?;
    let prog = ProgrammedMatrix::quantize(&target, pipe.mac.weight_bits)?;
    let actual = prog.effective_real(&pipe)?;
    let sweep = error_vs_rows_sweep(&target, &actual, &p.m_list)?;
    let mut st = Table::new(&["m", "residual", "nmse"]);
    for s in &sweep {
        st.push([s.m as f64, s.residual, s.nmse]);
        out.metric(&format!("sweep_nmse_m{}", s.m), s.nmse);
    }
    out.artifacts.push(Artifact::table("sweep.csv", &st));

    let mut demo_cfg = pipe.mac.clone();
    demo_cfg.c2_ratio = p.demo_c2_ratio;
    let demo = accentuated_matrix_demo(&demo_cfg)?;
    out.metric("demo_residual_uncorrected", demo.residual_uncorrected());
    out.metric("demo_residual_corrected", demo.residual_corrected());
    out.metric("demo_max_error_uncorrected", demo.max_error_uncorrected());
    out.metric("demo_max_error_corrected", demo.max_error_corrected());
    out.artifacts
        .push(Artifact::matrix("demo_ideal.csv", &demo.ideal));
    out.artifacts
        .push(Artifact::matrix("demo_actual.csv", &demo.actual));
    out.artifacts
        .push(Artifact::matrix("demo_corrected.csv", &demo.corrected));
    out.artifacts.push(Artifact::matrix("demo_b.csv", &demo.b));

    let rs = running_sums(p.basis, p.signal_row, p.corrected_rows, &pipe)?;
    let fin_ideal = RunningSums::final_column(&rs.ideal);
    let fin_passive = RunningSums::final_column(&rs.passive);
    let fin_norm = RunningSums::final_column(&rs.normalized);
    let fin_corr = RunningSums::final_column(&rs.corrected);
    out.metric("running_passive_gain", fin_passive[0] / fin_ideal[0]);
    let lsb = pipe.adc.lsb;
    out.metric(
        "running_normalized_max_error_lsb",
        (&fin_norm - &fin_ideal).abs().max() / lsb,
    );
    out.metric(
        "running_corrected_max_error_lsb",
        (&fin_corr - fin_ideal.rows(0, fin_corr.len())).abs().max() / lsb,
    );
    // Omitted when every other channel is exactly zero.
    for (name, fin) in [
        ("running_ideal_signal_to_max_other", &fin_ideal),
        ("running_signal_to_max_other", &fin_passive),
    ] {
        let other = fin.rows(1, fin.len() - 1).abs().max();
        if other > 0.0 {
            out.metric(name, fin[0].abs() / other);
        }
    }
    let mut rt = Table::new(&[
        "cycle",
        "channel",
        "ideal",
        "passive",
        "normalized",
        "corrected",
    ]);
    let emit = p.channels_to_emit.min(n);
    for k in 0..emit {
        for i in 0..=n {
            let corr = if k < rs.corrected.nrows() {
                rs.corrected[(k, i)].to_string()
            } else {
                String::new()
            };
            rt.push([
                i.to_string(),
                k.to_string(),
                rs.ideal[(k, i)].to_string(),
                rs.passive[(k, i)].to_string(),
                rs.normalized[(k, i)].to_string(),
                corr,
            ]);
        }
    }
    out.artifacts.push(Artifact::table("running_sums.csv", &rt));
    Ok(out)
}
