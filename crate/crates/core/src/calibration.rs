//! Digital post-correction of the analog matrix.
//!
//! Droop and gain errors keep the analog product linear, so a digital matrix
//! `B` applied after the core can undo them: `B` minimizes `||A - B Ã||_F`
//! over a feasible set of values `B` may take.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{orthonormal_rows, BasisKind};
use crate::charge::{effective_matrix, MacConfig};
use crate::converters::DigitalCode;
use crate::error::{Error, Result};
use crate::pipeline::ProgrammedMatrix;

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_RCOND: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum FeasibleSet {
    Unconstrained,
    /// Signed `bits`-bit integers times `scale`.
    FixedPoint {
        bits: u32,
        scale: f64,
    },
}

impl FeasibleSet {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FeasibleSet::Unconstrained => Ok(()),
            FeasibleSet::FixedPoint { bits, scale } => {
                if !(2..=31).contains(&bits) {
                    return Err(Error::InvalidConfig(
                        "fixed-point bits must be in 2..=31".into(),
                    ));
                }
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::InvalidConfig(
                        "fixed-point scale must be positive".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    fn project(&self, b: DMatrix<f64>) -> DMatrix<f64> {
        match *self {
            FeasibleSet::Unconstrained => b,
            FeasibleSet::FixedPoint { bits, scale } => b.map(|v| {
                let (lo, hi) = (DigitalCode::min_value(bits), DigitalCode::max_value(bits));
                ((v / scale).round().clamp(lo as f64, hi as f64)) * scale
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationResult {
    pub b: DMatrix<f64>,
    pub residual_frobenius: f64,
    pub set: FeasibleSet,
}

/// `||target - b * actual||_F`.
pub fn residual(target: &DMatrix<f64>, b: &DMatrix<f64>, actual: &DMatrix<f64>) -> f64 {
    (target - b * actual).norm()
}

/// Moore-Penrose pseudoinverse through the SVD.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix to invert".into()));
    }
    if m.is_empty() {
        return Ok(DMatrix::zeros(m.ncols(), m.nrows()));
    }
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Decomposition("SVD did not converge".into()))?;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Decomposition("SVD factors missing".into())),
    };
    let s_max = svd.singular_values.max();
    let cutoff = PINV_RCOND * s_max;
    let s_inv = svd
        .singular_values
        .map(|s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 });
    // V * diag(1/s) * U^T
    let mut v = v_t.transpose();
    for (mut col, &si) in v.column_iter_mut().zip(s_inv.iter()) {
        col *= si;
    }
    Ok(v * u.transpose())
}

/// Minimizes `||a_target - B a_actual||_F` over `set`.
///
/// `a_target` is `m x p`, `a_actual` is `q x p`, and `B` is `m x q`. The
/// fixed-point solution rounds the unconstrained one onto the grid.
pub fn solve_correction(
    a_target: &DMatrix<f64>,
    a_actual: &DMatrix<f64>,
    set: FeasibleSet,
) -> Result<CalibrationResult> {
    set.validate()?;
    if a_target.ncols() != a_actual.ncols() {
        return Err(Error::DimensionMismatch {
            what: "target vs actual columns",
            expected: a_target.ncols(),
            found: a_actual.ncols(),
        });
    }
    if a_target.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target matrix".into()));
    }
    let b = set.project(a_target * pseudo_inverse(a_actual)?);
    let residual_frobenius = residual(a_target, &b, a_actual);
    Ok(CalibrationResult {
        b,
        residual_frobenius,
        set,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub m: usize,
    pub residual: f64,
    pub nmse: f64,
}

/// Solves with the first `m` rows of target and actual for each `m`;
/// `nmse = residual^2 / ||target_m||_F^2`. `m = 0` is skipped.
pub fn error_vs_rows_sweep(
    a_target: &DMatrix<f64>,
    a_actual: &DMatrix<f64>,
    m_list: &[usize],
) -> Result<Vec<SweepPoint>> {
    let avail = a_target.nrows().min(a_actual.nrows());
    let mut out = Vec::with_capacity(m_list.len());
    for &m in m_list {
        if m == 0 {
            continue;
        }
        if m > avail {
            return Err(Error::DimensionMismatch {
                what: "sweep rows vs available rows",
                expected: avail,
                found: m,
            });
        }
        let target = a_target.rows(0, m).into_owned();
        let actual = a_actual.rows(0, m).into_owned();
        let r = solve_correction(&target, &actual, FeasibleSet::Unconstrained)?;
        let norm2 = target.norm_squared();
        let nmse = if norm2 > 0.0 {
            r.residual_frobenius.powi(2) / norm2
        } else {
            0.0
        };
        out.push(SweepPoint {
            m,
            residual: r.residual_frobenius,
            nmse,
        });
    }
    Ok(out)
}

/// Ideal, uncorrected and corrected matrices in weight-code units.
#[derive(Clone, Debug)]
pub struct MatrixDemo {
    pub ideal: DMatrix<f64>,
    pub actual: DMatrix<f64>,
    pub corrected: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl MatrixDemo {
    pub fn residual_uncorrected(&self) -> f64 {
        (&self.ideal - &self.actual).norm()
    }

    pub fn residual_corrected(&self) -> f64 {
        (&self.ideal - &self.corrected).norm()
    }

    pub fn max_error_uncorrected(&self) -> f64 {
        (&self.ideal - &self.actual).abs().max()
    }

    pub fn max_error_corrected(&self) -> f64 {
        (&self.ideal - &self.corrected).abs().max()
    }
}

/// Square quantized DCT program, its effective matrix and the corrected
/// product, for a visual comparison. Use a small `c2_ratio` to exaggerate
/// the droop.
pub fn accentuated_matrix_demo(cfg: &MacConfig) -> Result<MatrixDemo> {
    cfg.validate()?;
    let n = cfg.cycles_per_product;
    let a = orthonormal_rows(BasisKind::Dct, n, n)?;
    let prog = ProgrammedMatrix::quantize(&a, cfg.weight_bits)?;
    let ideal = prog.codes().to_f64();
    let actual = effective_matrix(prog.codes(), cfg)?.in_code_units(cfg);
    let cal = solve_correction(&ideal, &actual, FeasibleSet::Unconstrained)?;
    let corrected = &cal.b * &actual;
    Ok(MatrixDemo {
        ideal,
        actual,
        corrected,
        b: cal.b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identical_matrices_give_identity() {
        let a = random(6, 6, 1);
        let r = solve_correction(&a, &a, FeasibleSet::Unconstrained).unwrap();
        assert!((r.b - DMatrix::<f64>::identity(6, 6)).abs().max() < 1e-10);
        assert!(r.residual_frobenius < 1e-10);
    }

    #[test]
    fn scaled_actual_is_exactly_corrected() {
        let a = random(4, 10, 2);
        let actual = &a * 0.37;
        let r = solve_correction(&a, &actual, FeasibleSet::Unconstrained).unwrap();
        assert!(r.residual_frobenius < 1e-10);
        assert!((&r.b * &actual - &a).abs().max() < 1e-10);
    }

    #[test]
    fn pinv_handles_rank_deficiency() {
        let mut a = random(3, 5, 3);
        let r0 = a.row(0).into_owned();
        a.set_row(2, &(r0 * 2.0));
        let p = pseudo_inverse(&a).unwrap();
        // Penrose conditions
        assert!((&a * &p * &a - &a).abs().max() < 1e-10);
        assert!((&p * &a * &p - &p).abs().max() < 1e-10);
    }

    #[test]
    fn residual_is_recomputable() {
        let t = random(5, 12, 4);
        let a = random(7, 12, 5);
        for set in [
            FeasibleSet::Unconstrained,
            FeasibleSet::FixedPoint {
                bits: 6,
                scale: 0.05,
            },
        ] {
            let r = solve_correction(&t, &a, set).unwrap();
            assert!((r.residual_frobenius - residual(&t, &r.b, &a)).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_point_lies_on_grid() {
        let t = random(3, 8, 6);
        let a = random(3, 8, 7);
        let set = FeasibleSet::FixedPoint {
            bits: 4,
            scale: 0.25,
        };
        let r = solve_correction(&t, &a, set).unwrap();
        for &v in r.b.iter() {
            let k = v / 0.25;
            assert!((k - k.round()).abs() < 1e-12);
            assert!((-8.0..=7.0).contains(&k));
        }
        let free = solve_correction(&t, &a, FeasibleSet::Unconstrained).unwrap();
        assert!(r.residual_frobenius >= free.residual_frobenius - 1e-12);
    }

    #[test]
    fn errors() {
        let t = random(2, 3, 8);
        let a = random(2, 4, 9);
        assert!(matches!(
            solve_correction(&t, &a, FeasibleSet::Unconstrained),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut bad = random(2, 3, 10);
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(
            solve_correction(&t, &bad, FeasibleSet::Unconstrained),
            Err(Error::NonFinite(_))
        ));
        assert!(solve_correction(
            &t,
            &t,
            FeasibleSet::FixedPoint {
                bits: 1,
                scale: 1.0
            }
        )
        .is_err());
    }

    #[test]
    fn sweep_skips_zero_and_matches_full_solve() {
        let t = random(8, 20, 11);
        let a = random(8, 20, 12);
        let sweep = error_vs_rows_sweep(&t, &a, &[0, 8]).unwrap();
        assert_eq!(sweep.len(), 1);
        let full = solve_correction(&t, &a, FeasibleSet::Unconstrained).unwrap();
        assert!((sweep[0].residual - full.residual_frobenius).abs() < 1e-12);
        assert!(error_vs_rows_sweep(&t, &a, &[9]).is_err());
    }

    #[test]
    fn sweep_is_a_sum_of_row_solves() {
        let t = random(8, 64, 13);
        let a = &t + random(8, 64, 14) * 0.3;
        let sweep = error_vs_rows_sweep(&t, &a, &(1..=8).collect::<Vec<_>>()).unwrap();
        for p in &sweep {
            let actual = a.rows(0, p.m).into_owned();
            let mut res2 = 0.0;
            let mut norm2 = 0.0;
            for j in 0..p.m {
                let row = t.rows(j, 1).into_owned();
                let r = solve_correction(&row, &actual, FeasibleSet::Unconstrained).unwrap();
                res2 += r.residual_frobenius.powi(2);
                norm2 += row.norm_squared();
            }
            assert!((p.nmse - res2 / norm2).abs() < 1e-10, "m = {}", p.m);
        }
    }

    #[test]
    fn demo_correction_improves_every_measure() {
        let cfg = MacConfig {
            c2_ratio: 10.0,
            ..MacConfig::default()
        };
        let d = accentuated_matrix_demo(&cfg).unwrap();
        assert!(d.max_error_corrected() < d.max_error_uncorrected());
        assert!(d.residual_corrected() <= d.residual_uncorrected());
    }

    #[test]
    fn demo_without_droop_is_identity() {
        let cfg = MacConfig {
            c2_ratio: 1e9,
            ..MacConfig::default()
        };
        let d = accentuated_matrix_demo(&cfg).unwrap();
        assert!((&d.actual - &d.ideal).abs().max() < 1e-6);
        assert!((&d.b - DMatrix::<f64>::identity(64, 64)).abs().max() < 1e-6);
    }
}
