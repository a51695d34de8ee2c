//! Filter scanned over an image.
//!
//! Every window is one inner product through the analog pipeline
//! (6b input, 3b weights, 6b output). Two digital fixed-point references
//! with the same widths are computed alongside: one with an exact
//! accumulator and one whose accumulator is itself a saturating 6-bit
//! register.

use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{flatten, gabor_kernel, nmse, Artifact, Outcome};
use crate::calibration::{solve_correction, FeasibleSet};
use crate::config::RunConfig;
use crate::converters::DigitalCode;
use crate::error::{Error, Result};
use crate::io::read_matrix;
use crate::pipeline::{Pipeline, ProgrammedMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterScanParams {
    /// CSV grid; a synthetic test image is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    /// CSV grid; a Gabor kernel is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<PathBuf>,
    pub stride: usize,
    pub image_size: usize,
    pub gabor_theta: f64,
    pub gabor_wavelength: f64,
    pub gabor_sigma: f64,
    pub gabor_phase: f64,
}

impl Default for FilterScanParams {
    fn default() -> Self {
        FilterScanParams {
            image: None,
            filter: None,
            stride: 1,
            image_size: 48,
            gabor_theta: 0.6,
            gabor_wavelength: 4.0,
            gabor_sigma: 2.0,
            gabor_phase: 0.0,
        }
    }
}

/// Deterministic 0..255 test image with flat regions, sharp edges, a
/// saturated block and a low-contrast texture.
pub fn synthetic_image(size: usize) -> DMatrix<f64> {
    let s = size as f64;
    DMatrix::from_fn(size, size, |r, c| {
        let (y, x) = (r as f64 / s, c as f64 / s);
        let mut v = 40.0 + 120.0 * x;
        if (x - 0.3).powi(2) + (y - 0.35).powi(2) < 0.04 {
            v = 255.0;
        }
        if x > 0.6 && y > 0.6 {
            v = 0.0;
        }
        if y > 0.75 && x < 0.5 {
            v += 60.0 * (2.0 * std::f64::consts::PI * 6.0 * (x + 0.5 * y)).sin();
        }
        v.clamp(0.0, 255.0)
    })
}

#[derive(Clone, Debug)]
pub struct ScanMaps {
    /// Floating-point products of the unquantized image and filter.
    pub ideal: DMatrix<f64>,
    pub analog: DMatrix<f64>,
    /// Analog map after the scalar least-squares correction.
    pub analog_calibrated: DMatrix<f64>,
    pub digital_exact_acc: DMatrix<f64>,
    pub digital_6b_acc: DMatrix<f64>,
}

impl ScanMaps {
    pub fn nmse_vs_exact_acc(&self) -> (f64, f64, f64) {
        let r = &self.digital_exact_acc;
        (
            nmse(&self.analog, r),
            nmse(&self.analog_calibrated, r),
            nmse(&self.digital_6b_acc, r),
        )
    }
}

/// Scans `filter` over `image`. Pixel values are mapped to input codes with
/// a single scale so that the image peak hits the largest DAC code.
pub fn filter_scan(
    image: &DMatrix<f64>,
    filter: &DMatrix<f64>,
    stride: usize,
    pipe: &Pipeline,
) -> Result<ScanMaps> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be at least 1".into()));
    }
    let (fh, fw) = filter.shape();
    let (ih, iw) = image.shape();
    if fh == 0 || fw == 0 || fh > ih || fw > iw {
        return Err(Error::DimensionMismatch {
            what: "filter size vs image size",
            expected: ih.min(iw),
            found: fh.max(fw),
        });
    }
    if fh * fw > pipe.cycles() {
        return Err(Error::DimensionMismatch {
            what: "filter taps vs cycles_per_product",
            expected: pipe.cycles(),
            found: fh * fw,
        });
    }
    if image.iter().chain(filter.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image or filter".into()));
    }

    let taps = flatten(filter);
    let prog = ProgrammedMatrix::quantize(
        &DMatrix::from_row_slice(1, taps.len(), &taps),
        pipe.mac.weight_bits,
    )?;
    let w_codes = prog.codes().row(0);
    let s_w = prog.row_scales()[0];
    let peak = image.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let s_x = if peak > 0.0 {
        DigitalCode::max_value(pipe.dac.bits) as f64 / peak
    } else {
        1.0
    };
    let acc = pipe.acc_per_code();
    let out_bits = pipe.adc.bits;
    let to_real = |code: f64| code * acc / (s_w * s_x);

    let correction = solve_correction(
        prog.source(),
        &prog.effective_real(pipe)?,
        FeasibleSet::Unconstrained,
    )?
    .b[(0, 0)];

    let oh = (ih - fh) / stride + 1;
    let ow = (iw - fw) / stride + 1;
    let mut maps = ScanMaps {
        ideal: DMatrix::zeros(oh, ow),
        analog: DMatrix::zeros(oh, ow),
        analog_calibrated: DMatrix::zeros(oh, ow),
        digital_exact_acc: DMatrix::zeros(oh, ow),
        digital_6b_acc: DMatrix::zeros(oh, ow),
    };
    for r in 0..oh {
        for c in 0..ow {
            let window = flatten(&image.view((r * stride, c * stride), (fh, fw)).into_owned());
            maps.ideal[(r, c)] = window.iter().zip(&taps).map(|(p, f)| p * f).sum();

            let x_codes: Vec<DigitalCode> = window
                .iter()
                .map(|p| DigitalCode::saturating((p * s_x).round() as i64, pipe.dac.bits))
                .collect();
            let trial = (r * ow + c) as u64;
            let y = pipe.run_codes(prog.codes(), &x_codes, trial)?[0].value() as f64;
            maps.analog[(r, c)] = to_real(y);
            maps.analog_calibrated[(r, c)] = correction * to_real(y);

            let exact: i64 = x_codes
                .iter()
                .zip(&w_codes)
                .map(|(x, &w)| x.value() as i64 * w as i64)
                .sum();
            let exact_code = DigitalCode::saturating((exact as f64 / acc).round() as i64, out_bits);
            maps.digital_exact_acc[(r, c)] = to_real(exact_code.value() as f64);

            let mut register: i64 = 0;
            for (x, &w) in x_codes.iter().zip(&w_codes) {
                let term = ((x.value() as i64 * w as i64) as f64 / acc).round() as i64;
                register = DigitalCode::saturating(register + term, out_bits).value() as i64;
            }
            maps.digital_6b_acc[(r, c)] = to_real(register as f64);
        }
    }
    Ok(maps)
}

pub(crate) fn run(cfg: &RunConfig) -> Result<Outcome> {
    let p = &cfg.filter_scan;
    let image = match &p.image {
        Some(path) => read_matrix(path)?,
        None => synthetic_image(p.image_size),
    };
    let filter = match &p.filter {
        Some(path) => read_matrix(path)?,
        None => gabor_kernel(
            8,
            p.gabor_theta,
            p.gabor_wavelength,
            p.gabor_sigma,
            p.gabor_phase,
        ),
    };
    let pipe = cfg.pipeline()?;
    let maps = filter_scan(&image, &filter, p.stride, &pipe)?;

    let (analog, analog_cal, acc6) = maps.nmse_vs_exact_acc();
    let mut out = Outcome::default();
    out.metric("nmse_analog_vs_exact_acc", analog);
    out.metric("nmse_analog_calibrated_vs_exact_acc", analog_cal);
    out.metric("nmse_6b_acc_vs_exact_acc", acc6);
    out.metric("nmse_analog_vs_ideal", nmse(&maps.analog, &maps.ideal));
    out.metric(
        "nmse_analog_calibrated_vs_ideal",
        nmse(&maps.analog_calibrated, &maps.ideal),
    );
    out.metric(
        "nmse_exact_acc_vs_ideal",
        nmse(&maps.digital_exact_acc, &maps.ideal),
    );
    out.metric(
        "nmse_6b_acc_vs_ideal",
        nmse(&maps.digital_6b_acc, &maps.ideal),
    );
    out.artifacts.push(Artifact::matrix("image.csv", &image));
    out.artifacts.push(Artifact::matrix("filter.csv", &filter));
    out.artifacts
        .push(Artifact::matrix("ideal.csv", &maps.ideal));
    out.artifacts
        .push(Artifact::matrix("analog.csv", &maps.analog));
    out.artifacts.push(Artifact::matrix(
        "analog_calibrated.csv",
        &maps.analog_calibrated,
    ));
    out.artifacts.push(Artifact::matrix(
        "digital_exact_acc.csv",
        &maps.digital_exact_acc,
    ));
    out.artifacts
        .push(Artifact::matrix("digital_6b_acc.csv", &maps.digital_6b_acc));
    Ok(out)
}
