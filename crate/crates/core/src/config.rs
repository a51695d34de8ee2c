//! Run configuration.
//!
//! A single TOML file; every section and key is optional and falls back to
//! the documented default. Unknown keys are rejected. Command-line flags
//! override file values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::charge::MacConfig;
use crate::converters::{AdcConfig, DacConfig};
use crate::error::{Error, Result};
use crate::experiments::calibration_sweep::CalibrationSweepParams;
use crate::experiments::compression::CompressionParams;
use crate::experiments::filter_scan::FilterScanParams;
use crate::experiments::matched_filter::MatchedFilterParams;
use crate::experiments::noise_mc::NoiseMcParams;
use crate::experiments::orthonormal::OrthonormalParams;
use crate::experiments::sgd::SgdParams;
use crate::noise::NoiseSpec;
use crate::pipeline::Pipeline;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub mac: MacConfig,
    pub dac: DacConfig,
    pub adc: AdcConfig,
    pub noise: NoiseSpec,
    pub orthonormal: OrthonormalParams,
    pub matched_filter: MatchedFilterParams,
    pub filter_scan: FilterScanParams,
    pub compression: CompressionParams,
    pub sgd: SgdParams,
    pub noise_mc: NoiseMcParams,
    pub calibration_sweep: CalibrationSweepParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            experiment: None,
            seed: 1,
            output_dir: None,
            threads: None,
            mac: MacConfig::default(),
            dac: DacConfig::default(),
            adc: AdcConfig::default(),
            noise: NoiseSpec::default(),
            orthonormal: OrthonormalParams::default(),
            matched_filter: MatchedFilterParams::default(),
            filter_scan: FilterScanParams::default(),
            compression: CompressionParams::default(),
            sgd: SgdParams::default(),
            noise_mc: NoiseMcParams::default(),
            calibration_sweep: CalibrationSweepParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|msg| Error::MalformedFile {
            path: path.to_path_buf(),
            msg,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        self.mac.validate()?;
        self.dac.validate()?;
        self.adc.validate()?;
        self.noise.validate()
    }

    /// The signal chain with the noise stream keyed to the run seed.
    pub fn pipeline(&self) -> Result<Pipeline> {
        let mut noise = self.noise.clone();
        noise.rng_seed = self.seed;
        Pipeline::new(self.mac.clone(), self.dac.clone(), self.adc.clone(), noise)
    }

    /// The resolved configuration as echoed into reports: invocation-only
    /// settings (output directory, thread count) are dropped.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.output_dir = None;
        c.threads = None;
        serde_json::to_value(&c).expect("config serializes to JSON")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig::from_toml_str("[mac]\nc3_ratio = 2.0").is_err());
        assert!(RunConfig::from_toml_str("[noise]\nrng_seed = 2").is_err());
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let c = RunConfig::from_toml_str(
            "seed = 9\n[mac]\nc2_ratio = 10.0\nmode = { active = { dc_gain = 100.0 } }\n[matched_filter]\nsnr_db = [0.0, 10.0]",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.mac.c2_ratio, 10.0);
        assert_eq!(c.mac.mode, crate::MacMode::Active { dc_gain: 100.0 });
        assert_eq!(c.mac.cycles_per_product, 64);
        assert_eq!(c.matched_filter.snr_db, vec![0.0, 10.0]);
    }

    #[test]
    fn printed_config_parses_back() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        c.mac.c_unit = -1.0;
        assert!(c.validate().is_err());
        let c = RunConfig {
            schema_version: 2,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = RunConfig::load(Path::new("/no/such/run.toml")).unwrap_err();
        assert!(err.to_string().contains("/no/such/run.toml"));
    }
}
