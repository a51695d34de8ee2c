//! Monte Carlo kT/C noise on the accumulation capacitor.
//!
//! Every cycle samples the full sampling bank (`-weight_levels` code) with a
//! zero input, so the trace carries only the injected noise. The per-cycle
//! spread across trials is compared with the closed-form sigma.

use serde::{Deserialize, Serialize};

use super::{Artifact, Outcome};
use crate::config::RunConfig;
use crate::error::Result;
use crate::io::Table;
use crate::noise::{cycle_statistics, monte_carlo, sigma_after_cycles, steady_state_sigma};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseMcParams {
    /// Sample paths written to `traces.csv`; all trials enter the statistics.
    pub traces_to_emit: usize,
}

impl Default for NoiseMcParams {
    fn default() -> Self {
        NoiseMcParams {
            traces_to_emit: 150,
        }
    }
}

pub(crate) fn run(cfg: &RunConfig) -> Result<Outcome> {
    let pipe = cfg.pipeline()?;
    let mac = &pipe.mac;
    let mut spec = pipe.noise.clone();
    spec.enabled = true;
    let n = mac.cycles_per_product;
    let code = -(mac.weight_levels as i32);
    let row = vec![code; n];
    let v_in = vec![0.0; n];
    let traces = monte_carlo(&v_in, &row, mac, &spec)?;
    let stats = cycle_statistics(&traces);

    let c_s = mac.capacitance(code).abs();
    let mut per_cycle = Table::new(&["cycle", "mc_mean", "mc_std", "analytic_sigma"]);
    let mut analytic_n = 0.0;
    for i in 0..=n {
        // Cycle i of the trace has seen i noise injections; the closed form
        // indexed by i - 1 counts the same number.
        let analytic = if i == 0 {
            0.0
        } else {
            sigma_after_cycles((i - 1) as u64, c_s, mac)?
        };
        if i == n {
            analytic_n = analytic;
        }
        per_cycle.push([i as f64, stats.mean[i], stats.std[i], analytic]);
    }

    let mut tr = Table::new(&["trial", "cycle", "v_c2"]);
    for (t, trace) in traces.iter().take(cfg.noise_mc.traces_to_emit).enumerate() {
        for (i, v) in trace.v_c2.iter().enumerate() {
            tr.push([t.to_string(), i.to_string(), v.to_string()]);
        }
    }

    let mc_n = stats.std[n];
    let steady = steady_state_sigma(mac);
    let mut out = Outcome::default();
    out.metric("trials", traces.len() as f64);
    out.metric("mc_std_final", mc_n);
    out.metric("analytic_sigma_final", analytic_n);
    out.metric("rel_error_final", (mc_n - analytic_n).abs() / analytic_n);
    out.metric("steady_state_sigma", steady);
    out.metric("analytic_to_steady_ratio", analytic_n / steady);
    out.metric("mc_mean_final", stats.mean[n]);
    out.artifacts
        .push(Artifact::table("per_cycle.csv", &per_cycle));
    out.artifacts.push(Artifact::table("traces.csv", &tr));
    Ok(out)
}
