//! Declarative run configuration, JSON or TOML. All quantities in SI units.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::mi::{ScanSettings, DEFAULT_BINS, DEFAULT_RANGE, DEFAULT_STEP};
use crate::params::{ChannelParams, SourceParams};
use crate::trace::{DigitizerSpec, Scenario};

pub const DEFAULT_BAND: (f64, f64) = (1.5e6, 3.5e6);
pub const DEFAULT_REPEATS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scenarios beyond the unobstructed reference, which always runs.
    pub scenarios: Vec<Scenario>,
    pub source: SourceParams,
    pub channel: ChannelParams,
    pub scatterer_only: ChannelParams,
    pub digitizer: DigitizerSpec,
    /// Round samples onto the digitizer grid before analysis.
    pub quantize: bool,
    /// Analysis band `(f_lo, f_hi)`, Hz.
    pub band: (f64, f64),
    pub n_bins_a: usize,
    pub n_bins_b: usize,
    /// Delay step, seconds.
    pub step: f64,
    /// Half-width of the delay scan, seconds.
    pub range: f64,
    pub bias_correction: bool,
    pub repeats: usize,
    pub base_seed: u64,
    /// Welch segment length for the squeezing spectrum, samples.
    pub spectrum_segment: usize,
    /// Directory for report and CSV files; nothing is written when absent.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![
                Scenario::TwinChannel,
                Scenario::SplitThermal,
                Scenario::SplitCoherent,
            ],
            source: SourceParams::default(),
            channel: ChannelParams::default(),
            scatterer_only: ChannelParams::scatterer_only(),
            digitizer: DigitizerSpec::default(),
            quantize: true,
            band: DEFAULT_BAND,
            n_bins_a: DEFAULT_BINS,
            n_bins_b: DEFAULT_BINS,
            step: DEFAULT_STEP,
            range: DEFAULT_RANGE,
            bias_correction: false,
            repeats: DEFAULT_REPEATS,
            base_seed: 1,
            spectrum_segment: crate::dsp::DEFAULT_SEGMENT,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let is_toml = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let cfg: RunConfig = if is_toml {
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Scan settings shared by every scenario. Edge exclusion follows the
    /// sphere's kernel reach so all curves use the same sample window.
    pub fn scan_settings(&self) -> ScanSettings {
        ScanSettings {
            step: self.step,
            range: self.range,
            n_bins_a: self.n_bins_a,
            n_bins_b: self.n_bins_b,
            edge_exclusion: self.channel.edge_exclusion(self.digitizer.sample_rate()),
            bias_correction: self.bias_correction,
        }
    }

    pub fn runs(&self, scenario: Scenario) -> bool {
        scenario == Scenario::TwinUnobstructed || self.scenarios.contains(&scenario)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64)
            .map(|r| self.base_seed.wrapping_add(r))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.source
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("source: {e}")))?;
        self.channel
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("channel: {e}")))?;
        self.scatterer_only
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("scatterer_only: {e}")))?;
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        let nyquist = 0.5 * self.digitizer.sample_rate();
        let (lo, hi) = self.band;
        if !(lo > 0.0 && lo < hi && hi < nyquist) {
            return bad(format!("band must satisfy 0 < f_lo < f_hi < {nyquist} Hz"));
        }
        if self.n_bins_a < 2 || self.n_bins_b < 2 {
            return bad("bins must be >= 2 per axis".into());
        }
        let scan = self.scan_settings();
        scan.window(self.digitizer.n_samples(), self.digitizer.sample_rate())
            .map_err(|e| ConfigError::Invalid(format!("scan: {e}")))?;
        let seg = self.spectrum_segment;
        if !seg.is_power_of_two() || seg < 2 || seg > self.digitizer.n_samples() {
            return bad(format!(
                "spectrum_segment must be a power of two <= n_samples, got {seg}"
            ));
        }
        Ok(())
    }
}
