//! Synthetic trace pairs for the twin-beam, split-thermal and split-coherent
//! configurations.
//!
//! All noise is expressed relative to shot noise. A coherent beam of power
//! `P` has white fluctuations of per-sample variance
//! `shot_variance_per_watt * P`; the twin source adds a shared component
//! that cancels in the intensity difference, leaving `10^(-S/10)` of the
//! shot-noise reference there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::next_fast_len;
use crate::error::SourceError;
use crate::params::SourceParams;
use crate::trace::{Channel, DigitizerSpec, Scenario, Trace, TracePair};

/// Random-stream identifiers; each consumer of a seed owns one.
pub(crate) mod stream {
    pub const SHARED_WHITE: u64 = 1;
    pub const SHARED_EXCESS: u64 = 2;
    pub const ARM_A: u64 = 3;
    pub const ARM_B: u64 = 4;
    pub const THERMAL: u64 = 5;
    pub const LOSS: u64 = 16;
    pub const ELECTRONIC: u64 = 17;
}

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub(crate) fn gaussian_noise(seed: u64, stream: u64, n: usize, std: f64) -> Vec<f64> {
    let mut r = rng(seed, stream);
    (0..n)
        .map(|_| std * r.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Per-sample variances of the simulated components, digitizer units squared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBudget {
    pub shot_variance_a: f64,
    pub shot_variance_b: f64,
    /// Variance of the component injected identically into both arms.
    pub common_mode_variance: f64,
}

impl NoiseBudget {
    pub fn twin(params: &SourceParams, sample_rate: f64) -> Self {
        let (va, vb) = shot_variances(params);
        let vbar = 0.5 * (va + vb);
        let s = params.squeezing_factor();
        let e = params.excess_factor();
        let w = params.sigma0 / std::f64::consts::SQRT_2 * sample_rate;
        // Sum of squares of a unit-sum Gaussian kernel of std w samples.
        let kernel_power = 1.0 / (2.0 * std::f64::consts::PI.sqrt() * w.max(0.5));
        Self {
            shot_variance_a: va,
            shot_variance_b: vb,
            common_mode_variance: (1.0 - s) * vbar + (e - 1.0) * vbar * kernel_power.min(1.0),
        }
    }
}

fn shot_variances(params: &SourceParams) -> (f64, f64) {
    (
        params.shot_variance_per_watt * params.mean_power_a,
        params.shot_variance_per_watt * params.mean_power_b,
    )
}

fn check(params: &SourceParams) -> Result<(), SourceError> {
    params
        .validate()
        .map_err(|e| SourceError::InvalidParams(e.to_string()))
}

/// White noise smoothed by a unit-sum Gaussian kernel of standard deviation
/// `width` samples, so its low-frequency PSD equals that of the input.
fn gaussian_colored(seed: u64, stream: u64, n: usize, std: f64, width: f64) -> Vec<f64> {
    let pad = (10.0 * width).ceil() as usize;
    let m = next_fast_len(n + 2 * pad);
    let white = gaussian_noise(seed, stream, m, std);
    let mut buf: Vec<Complex64> = white.into_iter().map(|x| Complex64::new(x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = k.min(m - k) as f64;
        let omega = 2.0 * std::f64::consts::PI * kk / m as f64;
        *c *= (-0.5 * (omega * width).powi(2)).exp() / m as f64;
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    buf[pad..pad + n].iter().map(|c| c.re).collect()
}

fn finish(
    samples: Vec<f64>,
    spec: &DigitizerSpec,
    label: Channel,
    mean_level: f64,
    shot: f64,
) -> Result<Trace, SourceError> {
    let t = Trace::new(samples, *spec, label, 0.0)?.remove_dc();
    let mut t = t.with_shot_variance(shot)?;
    t.set_mean_level(mean_level + t.mean_level());
    Ok(t)
}

/// Quantum-correlated twin beams.
///
/// Both arms carry one shared Gaussian process: white at `(1 - s)` of the
/// mean shot level plus `(E - 1)` of it shaped by a Gaussian kernel of
/// standard deviation `sigma0 / sqrt(2)`. Each arm adds independent noise of
/// variance `s` times its own shot level. The shared part cancels in `a - b`.
pub fn gen_twin(
    params: &SourceParams,
    spec: &DigitizerSpec,
    seed: u64,
) -> Result<TracePair, SourceError> {
    check(params)?;
    let n = spec.n_samples();
    let (va, vb) = shot_variances(params);
    let vbar = 0.5 * (va + vb);
    let s = params.squeezing_factor();
    let e = params.excess_factor();
    let width = params.sigma0 / std::f64::consts::SQRT_2 * spec.sample_rate();

    let mut shared = gaussian_noise(seed, stream::SHARED_WHITE, n, ((1.0 - s) * vbar).sqrt());
    if e > 1.0 {
        let excess = gaussian_colored(
            seed,
            stream::SHARED_EXCESS,
            n,
            ((e - 1.0) * vbar).sqrt(),
            width,
        );
        shared.iter_mut().zip(&excess).for_each(|(x, y)| *x += y);
    }
    let mut a = gaussian_noise(seed, stream::ARM_A, n, (s * va).sqrt());
    let mut b = gaussian_noise(seed, stream::ARM_B, n, (s * vb).sqrt());
    a.iter_mut().zip(&shared).for_each(|(x, c)| *x += c);
    b.iter_mut().zip(&shared).for_each(|(x, c)| *x += c);

    let dc = params.dc_level_per_watt;
    let a = finish(a, spec, Channel::Probe, dc * params.mean_power_a, va)?;
    let b = finish(b, spec, Channel::Conjugate, dc * params.mean_power_b, vb)?;
    Ok(TracePair::new(a, b, Scenario::TwinUnobstructed)?)
}

/// One thermal-like beam split in two.
///
/// The common process is first-order low-pass (AR(1)) with corner
/// `thermal_corner_hz` and low-frequency level `thermal_excess_db` above the
/// mean shot level; each output adds its own shot noise.
pub fn gen_split_thermal(
    params: &SourceParams,
    spec: &DigitizerSpec,
    seed: u64,
) -> Result<TracePair, SourceError> {
    check(params)?;
    let n = spec.n_samples();
    let (va, vb) = shot_variances(params);
    let vbar = 0.5 * (va + vb);
    let mut a = gaussian_noise(seed, stream::ARM_A, n, va.sqrt());
    let mut b = gaussian_noise(seed, stream::ARM_B, n, vb.sqrt());

    let level = params.thermal_factor() * vbar;
    if level > 0.0 {
        let phi =
            (-2.0 * std::f64::consts::PI * params.thermal_corner_hz / spec.sample_rate()).exp();
        let innovation = level.sqrt() * (1.0 - phi);
        let stationary = (level * (1.0 - phi) / (1.0 + phi)).sqrt();
        let mut r = rng(seed, stream::THERMAL);
        let mut x = stationary * r.sample::<f64, _>(StandardNormal);
        for (ai, bi) in a.iter_mut().zip(b.iter_mut()) {
            *ai += x;
            *bi += x;
            x = phi * x + innovation * r.sample::<f64, _>(StandardNormal);
        }
    }

    let dc = params.dc_level_per_watt;
    let a = finish(a, spec, Channel::Probe, dc * params.mean_power_a, va)?;
    let b = finish(b, spec, Channel::Conjugate, dc * params.mean_power_b, vb)?;
    Ok(TracePair::new(a, b, Scenario::SplitThermal)?)
}

/// Two independent shot-noise-limited beams.
pub fn gen_split_coherent(
    params: &SourceParams,
    spec: &DigitizerSpec,
    seed: u64,
) -> Result<TracePair, SourceError> {
    gen_split_coherent_seeded(params, spec, seed, seed.wrapping_add(0x9E37_79B9_7F4A_7C15))
}

/// [`gen_split_coherent`] with an explicit seed per arm. Equal seeds make
/// the arms copies of one noise record up to scale.
pub fn gen_split_coherent_seeded(
    params: &SourceParams,
    spec: &DigitizerSpec,
    seed_a: u64,
    seed_b: u64,
) -> Result<TracePair, SourceError> {
    check(params)?;
    let n = spec.n_samples();
    let (va, vb) = shot_variances(params);
    let a = gaussian_noise(seed_a, stream::ARM_A, n, va.sqrt());
    let b = gaussian_noise(seed_b, stream::ARM_A, n, vb.sqrt());
    let dc = params.dc_level_per_watt;
    let a = finish(a, spec, Channel::CoherentA, dc * params.mean_power_a, va)?;
    let b = finish(b, spec, Channel::CoherentB, dc * params.mean_power_b, vb)?;
    Ok(TracePair::new(a, b, Scenario::SplitCoherent)?)
}

/// Round every sample to the nearest level of `spec`'s quantizer, clipping
/// to the extreme levels. Returns the quantized trace (on the input's clock)
/// and the fraction of samples that clipped.
pub fn quantize(trace: &Trace, spec: &DigitizerSpec) -> (Trace, f64) {
    let src = trace.spec();
    let out_spec = DigitizerSpec::new(
        src.sample_rate(),
        src.n_samples(),
        spec.bit_depth(),
        spec.full_scale(),
    )
    .expect("combination of two valid specs is valid");
    let step = out_spec.level_step();
    let top = out_spec.levels() - 1;
    let half = 0.5 * out_spec.full_scale();
    let mut clipped = 0usize;
    let samples: Vec<f64> = trace
        .samples()
        .iter()
        .map(|&x| {
            let k = ((x + half) / step).round();
            let code = if k < 0.0 {
                clipped += 1;
                0
            } else if k > top as f64 {
                clipped += 1;
                top
            } else {
                k as u64
            };
            out_spec.level_value(code)
        })
        .collect();
    let mut out = Trace::new(samples, out_spec, trace.label(), trace.mean_level())
        .expect("quantized samples are finite and correctly sized");
    out.set_shot_variance(trace.shot_variance());
    let fraction = clipped as f64 / trace.len().max(1) as f64;
    (out, fraction)
}

/// Quantize both arms; returns the larger of the two clip fractions.
pub fn quantize_pair(pair: &TracePair, spec: &DigitizerSpec) -> (TracePair, f64) {
    let (a, fa) = quantize(pair.a(), spec);
    let (b, fb) = quantize(pair.b(), spec);
    let out = TracePair::new(a, b, pair.scenario()).expect("quantization preserves the clock");
    (out, fa.max(fb))
}
