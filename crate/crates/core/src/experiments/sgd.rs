//! Gradient offload for a linear least-squares classifier.
//!
//! `theta` is a `classes x features` matrix trained on
//! `J = 1/2 ||theta X - Y||_F^2` over a sampled batch. The gradient
//! `R X^T` (with residual `R = theta X - Y`) is evaluated one feature at a
//! time as `R x_f`, an 8x64 matrix-vector product whose 64 cycles run over
//! the batch. A double-precision run with identical batches is the
//! reference trajectory.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{nmse, Artifact, Outcome};
use crate::calibration::{solve_correction, FeasibleSet};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::Table;
use crate::noise::{stream_id, trial_rng};
use crate::pipeline::{Fidelity, Pipeline, ProgrammedMatrix};

const DATA_STREAM: u64 = 0x4441_5441;
const BATCH_STREAM: u64 = 0x4241_5443;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdParams {
    pub steps: usize,
    pub alpha: f64,
    pub classes: usize,
    pub features: usize,
    pub batch: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Class means are drawn uniformly from `[-class_spread, class_spread]`.
    pub class_spread: f64,
    pub noise_std: f64,
    pub calibrate: bool,
    pub fidelity: Fidelity,
}

impl Default for SgdParams {
    fn default() -> Self {
        SgdParams {
            steps: 100,
            alpha: 1e-6,
            classes: 8,
            features: 64,
            batch: 64,
            train_samples: 1024,
            test_samples: 512,
            class_spread: 40.0,
            noise_std: 25.0,
            calibrate: true,
            fidelity: Fidelity::Simulated,
        }
    }
}

impl SgdParams {
    pub fn validate(&self, cycles: usize) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig(
                "sgd.alpha must be finite and non-negative".into(),
            ));
        }
        if self.classes < 2 || self.features < 1 {
            return Err(Error::InvalidConfig(
                "sgd needs at least 2 classes and 1 feature".into(),
            ));
        }
        if self.batch < 1 || self.batch > cycles {
            return Err(Error::DimensionMismatch {
                what: "sgd batch vs cycles_per_product",
                expected: cycles,
                found: self.batch,
            });
        }
        if self.train_samples < self.batch || self.test_samples < 1 {
            return Err(Error::InvalidConfig(
                "sgd.train_samples must cover one batch and sgd.test_samples must be positive"
                    .into(),
            ));
        }
        if !(self.class_spread.is_finite() && self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig(
                "sgd data scales must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Samples as columns, with integer labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One-hot targets, `classes x samples`.
    pub fn targets(&self, classes: usize) -> DMatrix<f64> {
        DMatrix::from_fn(classes, self.len(), |c, s| f64::from(self.labels[s] == c))
    }

    pub fn columns(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Fraction of samples whose largest score is the true class.
    pub fn accuracy(&self, theta: &DMatrix<f64>) -> f64 {
        let scores = theta * &self.x;
        let hits = (0..self.len())
            .filter(|&s| scores.column(s).imax() == self.labels[s])
            .count();
        hits as f64 / self.len() as f64
    }
}

/// Gaussian clusters around seeded class means; returns `(train, test)`.
pub fn synthetic_problem(p: &SgdParams, seed: u64) -> (Dataset, Dataset) {
    let mut rng = trial_rng(seed, stream_id(&[DATA_STREAM]));
    let means = DMatrix::from_fn(p.features, p.classes, |_, _| {
        rng.random_range(-p.class_spread..=p.class_spread)
    });
    let mut draw = |n: usize| {
        let labels: Vec<usize> = (0..n).map(|s| s % p.classes).collect();
        let x = DMatrix::from_fn(p.features, n, |f, s| {
            let z: f64 = StandardNormal.sample(&mut rng);
            means[(f, labels[s])] + p.noise_std * z
        });
        Dataset { x, labels }
    };
    let train = draw(p.train_samples);
    let test = draw(p.test_samples);
    (train, test)
}

/// Parameters after `step` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub theta: DMatrix<f64>,
    pub step: usize,
    pub alpha: f64,
}

impl SgdState {
    pub fn new(classes: usize, features: usize, alpha: f64) -> Self {
        SgdState {
            theta: DMatrix::zeros(classes, features),
            step: 0,
            alpha,
        }
    }

    /// Descends along `grad` and checks the result stays finite.
    pub fn update(&mut self, grad: &DMatrix<f64>) -> Result<()> {
        self.theta -= grad * self.alpha;
        self.step += 1;
        if let Some(v) = self.theta.iter().find(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: self.step,
                detail: format!("theta contains {v}"),
            });
        }
        Ok(())
    }
}

/// Exact `R X^T`.
pub fn reference_gradient(theta: &DMatrix<f64>, batch: &Dataset, classes: usize) -> DMatrix<f64> {
    let r = theta * &batch.x - batch.targets(classes);
    r * batch.x.transpose()
}

/// `R X^T` computed column by column on the pipeline.
pub fn offloaded_gradient(
    theta: &DMatrix<f64>,
    batch: &Dataset,
    classes: usize,
    pipe: &Pipeline,
    calibrate: bool,
    step: usize,
) -> Result<DMatrix<f64>> {
    let r = theta * &batch.x - batch.targets(classes);
    let prog = ProgrammedMatrix::quantize(&r, pipe.mac.weight_bits)?;
    let b = if calibrate && pipe.fidelity == Fidelity::Simulated {
        Some(solve_correction(&r, &prog.effective_real(pipe)?, FeasibleSet::Unconstrained)?.b)
    } else {
        None
    };
    let cols = (0..batch.x.nrows())
        .into_par_iter()
        .map(|f| {
            let x_f: Vec<f64> = batch.x.row(f).iter().copied().collect();
            let y =
                DVector::from_vec(pipe.matvec(&prog, &x_f, stream_id(&[step as u64, f as u64]))?);
            Ok(match &b {
                Some(b) => b * y,
                None => y,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub nmse: f64,
    pub loss_ref: f64,
    pub loss_sim: f64,
    pub accuracy_ref: f64,
    pub accuracy_sim: f64,
}

#[derive(Clone, Debug)]
pub struct SgdRun {
    /// Entry 0 is the initial state; entry `t` follows update `t`.
    pub trajectory: Vec<StepRecord>,
    pub theta_ref: DMatrix<f64>,
    pub theta_sim: DMatrix<f64>,
}

impl SgdRun {
    /// Mean NMSE over the updates (the initial state is excluded).
    pub fn mean_nmse(&self) -> f64 {
        let steps = &self.trajectory[1..];
        if steps.is_empty() {
            return 0.0;
        }
        steps.iter().map(|r| r.nmse).sum::<f64>() / steps.len() as f64
    }

    pub fn max_abs_theta_diff(&self) -> f64 {
        (&self.theta_ref - &self.theta_sim).abs().max()
    }
}

fn loss(theta: &DMatrix<f64>, data: &Dataset, classes: usize) -> f64 {
    0.5 * (theta * &data.x - data.targets(classes)).norm_squared() / data.len() as f64
}

pub fn sgd_offload(p: &SgdParams, pipe: &Pipeline, seed: u64) -> Result<SgdRun> {
    p.validate(pipe.cycles())?;
    let (train, test) = synthetic_problem(p, seed);
    let mut batch_rng = trial_rng(seed, stream_id(&[BATCH_STREAM]));
    let mut reference = SgdState::new(p.classes, p.features, p.alpha);
    let mut simulated = reference.clone();
    let record = |t: usize, a: &SgdState, b: &SgdState| StepRecord {
        step: t,
        nmse: nmse(&b.theta, &a.theta),
        loss_ref: loss(&a.theta, &test, p.classes),
        loss_sim: loss(&b.theta, &test, p.classes),
        accuracy_ref: test.accuracy(&a.theta),
        accuracy_sim: test.accuracy(&b.theta),
    };
    let mut trajectory = vec![record(0, &reference, &simulated)];
    for t in 1..=p.steps {
        let idx = sample(&mut batch_rng, train.len(), p.batch).into_vec();
        let batch = train.columns(&idx);
        let g_ref = reference_gradient(&reference.theta, &batch, p.classes);
        let g_sim = offloaded_gradient(&simulated.theta, &batch, p.classes, pipe, p.calibrate, t)?;
        reference.update(&g_ref)?;
        simulated.update(&g_sim)?;
        trajectory.push(record(t, &reference, &simulated));
    }
    Ok(SgdRun {
        trajectory,
        theta_ref: reference.theta,
        theta_sim: simulated.theta,
    })
}

pub(crate) fn run(cfg: &RunConfig) -> Result<Outcome> {
    let p = &cfg.sgd;
    let pipe = cfg.pipeline()?.with_fidelity(p.fidelity);
    let r = sgd_offload(p, &pipe, cfg.seed)?;
    let last = r
        .trajectory
        .last()
        .expect("trajectory holds the initial state");

    let mut t = Table::new(&[
        "step",
        "nmse",
        "loss_ref",
        "loss_sim",
        "accuracy_ref",
        "accuracy_sim",
    ]);
    for s in &r.trajectory {
        t.push([
            s.step as f64,
            s.nmse,
            s.loss_ref,
            s.loss_sim,
            s.accuracy_ref,
            s.accuracy_sim,
        ]);
    }
    let mut out = Outcome::default();
    out.metric("mean_nmse", r.mean_nmse());
    out.metric("final_nmse", last.nmse);
    out.metric("final_loss_ref", last.loss_ref);
    out.metric("final_loss_sim", last.loss_sim);
    out.metric("final_accuracy_ref", last.accuracy_ref);
    out.metric("final_accuracy_sim", last.accuracy_sim);
    out.metric("max_abs_theta_diff", r.max_abs_theta_diff());
    out.artifacts.push(Artifact::table("trajectory.csv", &t));
    out.artifacts
        .push(Artifact::matrix("theta_ref.csv", &r.theta_ref));
    out.artifacts
        .push(Artifact::matrix("theta_sim.csv", &r.theta_sim));
    Ok(out)
}
