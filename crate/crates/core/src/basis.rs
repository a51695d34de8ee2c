//! Orthonormal row families used as test matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// DCT-II.
    Dct,
    /// Sylvester-ordered Walsh-Hadamard; `n` must be a power of two.
    Hadamard,
}

/// First `m` rows of the orthonormal `n`-point basis.
pub fn orthonormal_rows(kind: BasisKind, m: usize, n: usize) -> Result<DMatrix<f64>> {
    if m > n {
        return Err(Error::DimensionMismatch {
            what: "basis rows",
            expected: n,
            found: m,
        });
    }
    match kind {
        BasisKind::Dct => Ok(dct_rows(m, n)),
        BasisKind::Hadamard => {
            if !n.is_power_of_two() {
                return Err(Error::Domain(format!(
                    "Hadamard size {n} is not a power of two"
                )));
            }
            let s = 1.0 / (n as f64).sqrt();
            Ok(DMatrix::from_fn(m, n, |i, j| {
                if (i & j).count_ones() % 2 == 0 {
                    s
                } else {
                    -s
                }
            }))
        }
    }
}

fn dct_rows(m: usize, n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    DMatrix::from_fn(m, n, |k, i| {
        let scale = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / nf).cos()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_orthonormal() {
        for kind in [BasisKind::Dct, BasisKind::Hadamard] {
            let a = orthonormal_rows(kind, 64, 64).unwrap();
            let g = &a * a.transpose();
            let err = (g - DMatrix::<f64>::identity(64, 64)).abs().max();
            assert!(err < 1e-12, "{kind:?}: {err}");
        }
    }

    #[test]
    fn bad_shapes() {
        assert!(orthonormal_rows(BasisKind::Dct, 9, 8).is_err());
        assert!(orthonormal_rows(BasisKind::Hadamard, 4, 12).is_err());
    }
}
