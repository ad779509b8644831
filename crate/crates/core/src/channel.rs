//! Scatterer and integrating-sphere channel on arm a.
//!
//! Stage order is fixed: beam-splitter loss, then the sphere's random-delay
//! convolution, then detector electronic noise. Arm b is never touched.

use crate::dsp::convolve_reflect;
use crate::error::ChannelError;
use crate::params::ChannelParams;
use crate::source::{gaussian_noise, stream};
use crate::trace::{Scenario, Trace, TracePair};

/// Kernel support on each side of `tau0`, in units of `sigma`.
pub const KERNEL_REACH: f64 = 12.0;

/// Beam-splitter loss: the fluctuation scales by `transmission` and fresh
/// vacuum noise of variance `t (1 - t)` times the input shot variance enters.
pub fn apply_loss(trace: &Trace, transmission: f64, seed: u64) -> Result<Trace, ChannelError> {
    if !(transmission > 0.0 && transmission <= 1.0) {
        return Err(ChannelError::InvalidTransmission(transmission));
    }
    if transmission == 1.0 {
        return Ok(trace.clone());
    }
    let shot = trace
        .shot_variance()
        .ok_or(ChannelError::MissingShotVariance)?;
    let t = transmission;
    let noise = gaussian_noise(
        seed,
        stream::LOSS,
        trace.len(),
        (t * (1.0 - t) * shot).sqrt(),
    );
    let samples = trace
        .samples()
        .iter()
        .zip(&noise)
        .map(|(x, e)| t * x + e)
        .collect();
    let mut out = trace.with_samples(samples)?;
    out.set_shot_variance(Some(t * shot));
    out.set_mean_level(t * trace.mean_level());
    Ok(out)
}

/// Discretized two-sided exponential delay density.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayKernel {
    /// Delay in samples of `weights[0]`.
    pub offset: isize,
    /// Probability mass per one-sample delay cell; sums to 1.
    pub weights: Vec<f64>,
}

impl DelayKernel {
    /// Cell-integrated density over `tau0 ± 12 sigma`, renormalized.
    pub fn new(tau0: f64, sigma: f64, sample_rate: f64) -> Self {
        let dt = 1.0 / sample_rate;
        let lo = ((tau0 - KERNEL_REACH * sigma) / dt).round() as isize;
        let hi = ((tau0 + KERNEL_REACH * sigma) / dt).round() as isize;
        // Cell m covers delays [(m - 1/2) dt, (m + 1/2) dt].
        let lower_tail = |x: f64| 0.5 * ((x - tau0) / sigma).min(0.0).exp();
        let upper_tail = |x: f64| 0.5 * (-(x - tau0) / sigma).min(0.0).exp();
        let mass = |m: isize| {
            let a = (m as f64 - 0.5) * dt;
            let b = (m as f64 + 0.5) * dt;
            if b <= tau0 {
                lower_tail(b) - lower_tail(a)
            } else if a >= tau0 {
                upper_tail(a) - upper_tail(b)
            } else {
                (0.5 - lower_tail(a)) + (0.5 - upper_tail(b))
            }
        };
        let mut weights: Vec<f64> = (lo..=hi).map(mass).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self {
            offset: lo,
            weights,
        }
    }

    /// Largest delay magnitude reached by the kernel, samples.
    pub fn reach(&self) -> usize {
        let last = self.offset + self.weights.len() as isize - 1;
        self.offset.unsigned_abs().max(last.unsigned_abs())
    }

    /// First moment, samples.
    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * (self.offset + j as isize) as f64)
            .sum()
    }
}

/// Convolve the fluctuation with the sphere's delay density.
///
/// The trace is extended by reflection at both ends, so the output keeps the
/// input length; the first and last `edge_exclusion` samples should be kept
/// out of any statistics.
pub fn apply_is_delay(trace: &Trace, params: &ChannelParams) -> Result<Trace, ChannelError> {
    params
        .validate()
        .map_err(|e| ChannelError::InvalidParams(e.to_string()))?;
    let fs = trace.spec().sample_rate();
    let n = trace.len();
    let span = ((params.tau0.abs() + KERNEL_REACH * params.sigma) * fs).ceil() as usize;
    if span.saturating_mul(4) >= n {
        return Err(ChannelError::KernelTooWide { kernel: span, n });
    }
    let kernel = DelayKernel::new(params.tau0, params.sigma, fs);
    let y = convolve_reflect(trace.samples(), &kernel.weights, kernel.offset);
    Ok(trace.with_samples(y)?)
}

/// Add independent Gaussian detector noise of the given rms.
pub fn apply_electronic_noise(trace: &Trace, rms: f64, seed: u64) -> Result<Trace, ChannelError> {
    if !(rms.is_finite() && rms >= 0.0) {
        return Err(ChannelError::InvalidNoise(rms));
    }
    if rms == 0.0 {
        return Ok(trace.clone());
    }
    let noise = gaussian_noise(seed, stream::ELECTRONIC, trace.len(), rms);
    let samples = trace
        .samples()
        .iter()
        .zip(&noise)
        .map(|(x, e)| x + e)
        .collect();
    Ok(trace.with_samples(samples)?)
}

/// Loss, sphere delay (when present) and electronic noise on arm a.
///
/// The loss stage transmits the fraction `eta` of the fluctuation; the
/// recorded mean level is then set to `power_transmission` of the input's.
pub fn apply_channel(
    pair: &TracePair,
    params: &ChannelParams,
    seed: u64,
) -> Result<TracePair, ChannelError> {
    params
        .validate()
        .map_err(|e| ChannelError::InvalidParams(e.to_string()))?;
    let input = pair.a();
    let mut a = apply_loss(input, params.eta, seed)?;
    a.set_mean_level(params.power_transmission * input.mean_level());
    let scenario = if params.integrating_sphere {
        a = apply_is_delay(&a, params)?;
        Scenario::TwinChannel
    } else {
        Scenario::ScattererOnly
    };
    let a = apply_electronic_noise(&a, params.electronic_noise_rms, seed)?;
    Ok(TracePair::new(a, pair.b().clone(), scenario)?)
}
