//! Source, channel and fit parameter sets.

use serde::{Deserialize, Serialize};

use crate::error::TraceError;

/// Statistical description of the twin-beam source.
///
/// Noise levels are referenced to the shot noise of a coherent beam at the
/// same mean power: `shot_variance_per_watt * power` is the per-sample shot
/// variance in digitizer units squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceParams {
    /// Intensity-difference noise below the shot-noise reference, dB.
    pub squeezing_db: f64,
    /// Width of the Gaussian correlation envelope, seconds.
    pub sigma0: f64,
    /// Per-beam noise above shot noise at low frequency, dB.
    pub excess_noise_db: f64,
    /// Mean optical power of arm a (probe), watts.
    pub mean_power_a: f64,
    /// Mean optical power of arm b (conjugate), watts.
    pub mean_power_b: f64,
    pub shot_variance_per_watt: f64,
    pub dc_level_per_watt: f64,
    /// Low-frequency excess of the thermal-like beam used for the split-conjugate pair, dB.
    pub thermal_excess_db: f64,
    /// Corner frequency of the thermal-like beam's Lorentzian spectrum, Hz.
    pub thermal_corner_hz: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            squeezing_db: 7.0,
            sigma0: 32.1e-9,
            excess_noise_db: 2.0,
            mean_power_a: 5.9e-3,
            mean_power_b: 5.3e-3,
            shot_variance_per_watt: 2.44e4,
            dc_level_per_watt: 2.0e4,
            thermal_excess_db: 18.0,
            thermal_corner_hz: 300e3,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::InvalidParams(m));
        let finite = [
            self.squeezing_db,
            self.sigma0,
            self.excess_noise_db,
            self.mean_power_a,
            self.mean_power_b,
            self.shot_variance_per_watt,
            self.dc_level_per_watt,
            self.thermal_corner_hz,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("source parameters must be finite".into());
        }
        // -inf switches the thermal component off.
        if self.thermal_excess_db.is_nan() || self.thermal_excess_db == f64::INFINITY {
            return bad("thermal_excess_db must be finite or -inf".into());
        }
        if self.squeezing_db < 0.0 {
            return bad(format!(
                "squeezing_db must be >= 0, got {}",
                self.squeezing_db
            ));
        }
        if self.sigma0 <= 0.0 {
            return bad(format!("sigma0 must be > 0, got {}", self.sigma0));
        }
        if self.excess_noise_db < 0.0 {
            return bad(format!(
                "excess_noise_db must be >= 0, got {}",
                self.excess_noise_db
            ));
        }
        if self.mean_power_a <= 0.0 || self.mean_power_b <= 0.0 {
            return bad("mean powers must be > 0".into());
        }
        if self.shot_variance_per_watt <= 0.0 {
            return bad("shot_variance_per_watt must be > 0".into());
        }
        if self.thermal_corner_hz <= 0.0 {
            return bad("thermal_corner_hz must be > 0".into());
        }
        Ok(())
    }

    /// Difference-noise factor relative to shot noise, `10^(-squeezing_db/10)`.
    pub fn squeezing_factor(&self) -> f64 {
        10f64.powf(-self.squeezing_db / 10.0)
    }

    pub fn excess_factor(&self) -> f64 {
        10f64.powf(self.excess_noise_db / 10.0)
    }

    pub fn thermal_factor(&self) -> f64 {
        if self.thermal_excess_db == f64::NEG_INFINITY {
            0.0
        } else {
            10f64.powf(self.thermal_excess_db / 10.0)
        }
    }
}

/// Scatterer plus integrating-sphere channel applied to arm a.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Forward-scattering efficiency: the transmission seen by the correlated
    /// fluctuation on its way through scatterer and sphere.
    pub eta: f64,
    /// Mean delay of the sphere, seconds.
    pub tau0: f64,
    /// Delay spread of the two-sided exponential kernel, seconds.
    pub sigma: f64,
    /// Optical power reaching the detector relative to the input.
    pub power_transmission: f64,
    /// Detector noise floor, digitizer units rms.
    pub electronic_noise_rms: f64,
    /// Whether the sphere (and so the delay kernel) is present.
    pub integrating_sphere: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            eta: 0.598,
            tau0: 32.7e-9,
            sigma: 19.7e-9,
            power_transmission: 0.14,
            electronic_noise_rms: 2.7,
            integrating_sphere: true,
        }
    }
}

impl ChannelParams {
    /// Scatterer without the sphere: almost nothing reaches the detector and
    /// what does is buried in electronic noise.
    pub fn scatterer_only() -> Self {
        Self {
            eta: 0.02,
            tau0: 0.0,
            sigma: 19.7e-9,
            power_transmission: 0.005,
            electronic_noise_rms: 30.0,
            integrating_sphere: false,
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::InvalidParams(m));
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        if !self.tau0.is_finite() {
            return bad("tau0 must be finite".into());
        }
        if !(self.power_transmission > 0.0 && self.power_transmission <= 1.0) {
            return bad(format!(
                "power_transmission must lie in (0, 1], got {}",
                self.power_transmission
            ));
        }
        if !(self.electronic_noise_rms.is_finite() && self.electronic_noise_rms >= 0.0) {
            return bad(format!(
                "electronic_noise_rms must be >= 0, got {}",
                self.electronic_noise_rms
            ));
        }
        Ok(())
    }

    /// Samples at each end of a processed trace that must stay out of MI
    /// statistics: twice the one-sided kernel reach `tau0 + 12 sigma`.
    pub fn edge_exclusion(&self, sample_rate: f64) -> usize {
        if !self.integrating_sphere {
            return 0;
        }
        (2.0 * (self.tau0.abs() + 12.0 * self.sigma) * sample_rate).ceil() as usize
    }
}

/// Recovered model parameters and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub sigma0: f64,
    pub tau0: f64,
    pub sigma: f64,
    pub eta: f64,
    pub fwhm_unobstructed: f64,
    pub fwhm_channel: f64,
    pub peak_ratio: f64,
    pub residual_rms: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SourceParams::default().validate().unwrap();
        ChannelParams::default().validate().unwrap();
        ChannelParams::scatterer_only().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        let bad_channel = [
            ChannelParams {
                eta: 0.0,
                ..ChannelParams::default()
            },
            ChannelParams {
                power_transmission: 1.5,
                ..ChannelParams::default()
            },
        ];
        for c in bad_channel {
            assert!(c.validate().is_err());
        }
        let bad_source = [
            SourceParams {
                sigma0: 0.0,
                ..SourceParams::default()
            },
            SourceParams {
                squeezing_db: -1.0,
                ..SourceParams::default()
            },
        ];
        for s in bad_source {
            assert!(s.validate().is_err());
        }
    }

    #[test]
    fn edge_exclusion_covers_kernel_reach() {
        let c = ChannelParams::default();
        // 2 * (32.7 + 236.4) ns at 2 GS/s
        assert_eq!(c.edge_exclusion(2e9), 1077);
    }
}
