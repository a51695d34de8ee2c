//! Compressing front layer on analog image data.
//!
//! Non-overlapping 8x8 patches of each colour channel are multiplied by
//! three filters per channel. Each filter output is one 64-cycle product and
//! one A/D conversion, so a 32x32x3 image becomes 4x4x9 digitized
//! activations.

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{flatten, gabor_kernel, Artifact, Outcome};
use crate::config::RunConfig;
use crate::converters::DigitalCode;
use crate::error::{Error, Result};
use crate::io::{read_matrix, Table};
use crate::noise::{stream_id, trial_rng};
use crate::pipeline::{Pipeline, ProgrammedMatrix};

const FILTER_STREAM: u64 = 0x4649_4c54;
const IMAGE_STREAM: u64 = 0x494d_4147;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressionParams {
    /// CSV grid of `channels * height` rows by `width` columns, channels
    /// stacked vertically. A seeded synthetic image is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    pub channels: usize,
    pub image_size: usize,
    pub filter_size: usize,
    pub filters_per_channel: usize,
    pub stride: usize,
}

impl Default for CompressionParams {
    fn default() -> Self {
        CompressionParams {
            image: None,
            channels: 3,
            image_size: 32,
            filter_size: 8,
            filters_per_channel: 3,
            stride: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConversionCounters {
    pub analog_mac_ops: u64,
    pub ad_conversions: u64,
    /// Samples a conventional front end would digitize.
    pub input_samples: u64,
}

impl ConversionCounters {
    /// MAC cycles per conversion.
    pub fn digitization_rate_divisor(&self) -> f64 {
        self.analog_mac_ops as f64 / self.ad_conversions as f64
    }

    /// Conversions saved relative to digitizing every input sample.
    pub fn compression_ratio(&self) -> f64 {
        self.input_samples as f64 / self.ad_conversions as f64
    }
}

#[derive(Clone, Debug)]
pub struct CompressionOutput {
    /// `[channel][filter]` maps of output codes.
    pub codes: Vec<Vec<DMatrix<i32>>>,
    /// Same layout, in real units.
    pub activations: Vec<Vec<DMatrix<f64>>>,
    pub counters: ConversionCounters,
}

impl CompressionOutput {
    /// `(height, width, depth)` of the activation tensor.
    pub fn shape(&self) -> (usize, usize, usize) {
        let depth = self.codes.iter().map(Vec::len).sum();
        let (h, w) = self
            .codes
            .first()
            .and_then(|c| c.first())
            .map_or((0, 0), |m| m.shape());
        (h, w, depth)
    }
}

/// Three Gabor kernels per channel with seeded orientations and phases.
pub fn seeded_filters(
    seed: u64,
    channels: usize,
    per_channel: usize,
    size: usize,
) -> Vec<Vec<DMatrix<f64>>> {
    let mut rng = trial_rng(seed, stream_id(&[FILTER_STREAM]));
    (0..channels)
        .map(|_| {
            (0..per_channel)
                .map(|_| {
                    let theta = rng.random_range(0.0..std::f64::consts::PI);
                    let wavelength = rng.random_range(3.0..8.0);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    gabor_kernel(size, theta, wavelength, size as f64 / 4.0, phase)
                })
                .collect()
        })
        .collect()
}

/// Seeded smooth colour image with values in 0..255.
pub fn synthetic_color_image(seed: u64, channels: usize, size: usize) -> Vec<DMatrix<f64>> {
    let mut rng = trial_rng(seed, stream_id(&[IMAGE_STREAM]));
    (0..channels)
        .map(|_| {
            let (fx, fy, ph): (f64, f64, f64) = (
                rng.random_range(0.05..0.4),
                rng.random_range(0.05..0.4),
                rng.random_range(0.0..std::f64::consts::TAU),
            );
            let base = rng.random_range(60.0..160.0);
            DMatrix::from_fn(size, size, |r, c| {
                let v = base + 90.0 * (fx * c as f64 + fy * r as f64 + ph).sin();
                v.clamp(0.0, 255.0)
            })
        })
        .collect()
}

/// Splits a vertically stacked CSV grid into channels.
pub fn split_channels(grid: &DMatrix<f64>, channels: usize) -> Result<Vec<DMatrix<f64>>> {
    if channels == 0 || !grid.nrows().is_multiple_of(channels) {
        return Err(Error::DimensionMismatch {
            what: "image rows vs channel count",
            expected: channels,
            found: grid.nrows(),
        });
    }
    let h = grid.nrows() / channels;
    Ok((0..channels)
        .map(|c| grid.rows(c * h, h).into_owned())
        .collect())
}

pub fn compression_layer_forward(
    image: &[DMatrix<f64>],
    filters: &[Vec<DMatrix<f64>>],
    stride: usize,
    pipe: &Pipeline,
) -> Result<CompressionOutput> {
    if image.len() != filters.len() {
        return Err(Error::DimensionMismatch {
            what: "filter groups vs image channels",
            expected: image.len(),
            found: filters.len(),
        });
    }
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be at least 1".into()));
    }
    let (h, w) = image.first().map_or((0, 0), |m| m.shape());
    if image.iter().any(|m| m.shape() != (h, w)) {
        return Err(Error::DimensionMismatch {
            what: "channel shapes",
            expected: h,
            found: 0,
        });
    }
    if h % stride != 0 || w % stride != 0 {
        return Err(Error::DimensionMismatch {
            what: "image size vs stride",
            expected: stride,
            found: if h % stride != 0 { h } else { w },
        });
    }
    let peak = image
        .iter()
        .flat_map(|m| m.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let s_x = if peak > 0.0 {
        DigitalCode::max_value(pipe.dac.bits) as f64 / peak
    } else {
        1.0
    };
    let acc = pipe.acc_per_code();
    let (oh, ow) = (h / stride, w / stride);
    let mut counters = ConversionCounters {
        input_samples: (h * w * image.len()) as u64,
        ..ConversionCounters::default()
    };
    let mut codes = Vec::with_capacity(image.len());
    let mut activations = Vec::with_capacity(image.len());

    for (ch, (plane, bank)) in image.iter().zip(filters).enumerate() {
        let (fh, fw) = bank.first().map_or((0, 0), |f| f.shape());
        if bank.iter().any(|f| f.shape() != (fh, fw)) || fh > stride || fw > stride || fh * fw == 0
        {
            return Err(Error::DimensionMismatch {
                what: "filter size vs stride",
                expected: stride,
                found: fh.max(fw),
            });
        }
        let rows: Vec<Vec<f64>> = bank.iter().map(flatten).collect();
        let stacked = DMatrix::from_fn(rows.len(), fh * fw, |j, i| rows[j][i]);
        let prog = ProgrammedMatrix::quantize(&stacked, pipe.mac.weight_bits)?;
        let mut ch_codes = vec![DMatrix::zeros(oh, ow); bank.len()];
        let mut ch_act = vec![DMatrix::zeros(oh, ow); bank.len()];
        for r in 0..oh {
            for c in 0..ow {
                let patch = flatten(&plane.view((r * stride, c * stride), (fh, fw)).into_owned());
                let x: Vec<DigitalCode> = patch
                    .iter()
                    .map(|p| DigitalCode::saturating((p * s_x).round() as i64, pipe.dac.bits))
                    .collect();
                let trial = stream_id(&[ch as u64, r as u64, c as u64]);
                let y = pipe.run_codes(prog.codes(), &x, trial)?;
                counters.analog_mac_ops += (pipe.cycles() * y.len()) as u64;
                counters.ad_conversions += y.len() as u64;
                for (f, code) in y.iter().enumerate() {
                    ch_codes[f][(r, c)] = code.value();
                    ch_act[f][(r, c)] = code.value() as f64 * acc / (prog.row_scales()[f] * s_x);
                }
            }
        }
        codes.push(ch_codes);
        activations.push(ch_act);
    }
    Ok(CompressionOutput {
        codes,
        activations,
        counters,
    })
}

pub(crate) fn run(cfg: &RunConfig) -> Result<Outcome> {
    let p = &cfg.compression;
    let image = match &p.image {
        Some(path) => split_channels(&read_matrix(path)?, p.channels)?,
        None => synthetic_color_image(cfg.seed, p.channels, p.image_size),
    };
    let filters = seeded_filters(cfg.seed, image.len(), p.filters_per_channel, p.filter_size);
    let pipe = cfg.pipeline()?;
    let fwd = compression_layer_forward(&image, &filters, p.stride, &pipe)?;

    let mut out = Outcome::default();
    let k = fwd.counters;
    let (h, w, d) = fwd.shape();
    out.metric("analog_mac_ops", k.analog_mac_ops as f64);
    out.metric("ad_conversions", k.ad_conversions as f64);
    out.metric("input_samples", k.input_samples as f64);
    out.metric("compression_ratio", k.compression_ratio());
    out.metric("digitization_rate_divisor", k.digitization_rate_divisor());
    out.metric("output_height", h as f64);
    out.metric("output_width", w as f64);
    out.metric("output_depth", d as f64);

    let mut t = Table::new(&["channel", "filter", "row", "col", "code", "activation"]);
    for (ch, (cs, acts)) in fwd.codes.iter().zip(&fwd.activations).enumerate() {
        for (f, (cm, am)) in cs.iter().zip(acts).enumerate() {
            for r in 0..cm.nrows() {
                for c in 0..cm.ncols() {
                    t.push([
                        ch.to_string(),
                        f.to_string(),
                        r.to_string(),
                        c.to_string(),
                        cm[(r, c)].to_string(),
                        am[(r, c)].to_string(),
                    ]);
                }
            }
        }
    }
    out.artifacts.push(Artifact::table("activations.csv", &t));
    Ok(out)
}
