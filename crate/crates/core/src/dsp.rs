//! Band-pass filtering and spectral estimation.
//!
//! The band-pass is applied as a real, symmetric mask in the frequency domain,
//! so it has exactly zero phase: filtering never moves an MI peak.
//! Welch PSDs use a Hann window with 50 % overlap.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::DspError;
use crate::trace::{validate_pair, Trace, TracePair};

/// Width of the raised-cosine skirts on either side of the passband, Hz.
pub const TRANSITION_HZ: f64 = 200e3;
pub const DEFAULT_SEGMENT: usize = 1 << 14;
/// Reflected padding on each side before filtering.
const FILTER_PAD: usize = 1 << 15;

/// Smallest 5-smooth integer >= n.
pub fn next_fast_len(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1usize;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut m = p35;
            while m < n {
                m *= 2;
            }
            best = best.min(m);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

/// Index into a signal of length `n` extended by mirror reflection about its
/// end samples (the edge sample is not repeated).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

fn reflect_extend(x: &[f64], pad: usize, total: usize) -> Vec<Complex64> {
    (0..total)
        .map(|k| Complex64::new(x[reflect_index(k as isize - pad as isize, x.len())], 0.0))
        .collect()
}

/// Frequency of DFT bin `k` for an `m`-point transform, folded to [0, fs/2].
fn bin_frequency(k: usize, m: usize, fs: f64) -> f64 {
    let k = if k <= m / 2 { k } else { m - k };
    k as f64 * fs / m as f64
}

/// Amplitude response of the band-pass mask.
pub fn bandpass_response(f: f64, f_lo: f64, f_hi: f64) -> f64 {
    if f >= f_lo && f <= f_hi {
        1.0
    } else if f < f_lo && f > f_lo - TRANSITION_HZ {
        0.5 - 0.5 * (PI * (f - (f_lo - TRANSITION_HZ)) / TRANSITION_HZ).cos()
    } else if f > f_hi && f < f_hi + TRANSITION_HZ {
        0.5 + 0.5 * (PI * (f - f_hi) / TRANSITION_HZ).cos()
    } else {
        0.0
    }
}

/// Multiply the spectrum of `x` by a real, even response and return the
/// filtered signal, same length. The input is extended by reflection first.
pub(crate) fn apply_real_response(
    x: &[f64],
    fs: f64,
    pad: usize,
    response: impl Fn(f64) -> f64 + Sync,
) -> Vec<f64> {
    let n = x.len();
    let pad = pad.min(n.saturating_sub(1));
    let m = next_fast_len(n + 2 * pad);
    let mut buf = reflect_extend(x, pad, m);
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    let scale = 1.0 / m as f64;
    buf.par_iter_mut().enumerate().for_each(|(k, c)| {
        *c *= response(bin_frequency(k, m, fs)) * scale;
    });
    planner.plan_fft_inverse(m).process(&mut buf);
    buf[pad..pad + n].iter().map(|c| c.re).collect()
}

/// Linear convolution `y[i] = sum_j w[j] x[i - offset - j]` with the input
/// extended by reflection, cropped to the input length.
pub(crate) fn convolve_reflect(x: &[f64], weights: &[f64], offset: isize) -> Vec<f64> {
    let n = x.len();
    let taps = weights.len();
    if taps <= 48 {
        return (0..n)
            .map(|i| {
                weights
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * x[reflect_index(i as isize - offset - j as isize, n)])
                    .sum()
            })
            .collect();
    }
    // Extended input covers indices [start, start + ext_len) of the reflected signal.
    let start = -offset - taps as isize + 1;
    let end = n as isize - offset;
    let ext_len = (end - start) as usize;
    let m = next_fast_len(ext_len + taps - 1);
    let mut xs: Vec<Complex64> = (0..m)
        .map(|k| {
            if k < ext_len {
                Complex64::new(x[reflect_index(start + k as isize, n)], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let mut ws: Vec<Complex64> = (0..m)
        .map(|k| Complex64::new(if k < taps { weights[k] } else { 0.0 }, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    fwd.process(&mut xs);
    fwd.process(&mut ws);
    let scale = 1.0 / m as f64;
    xs.iter_mut()
        .zip(&ws)
        .for_each(|(a, b)| *a = *a * b * scale);
    planner.plan_fft_inverse(m).process(&mut xs);
    // Full-convolution index of output i is i - offset - start.
    (0..n)
        .map(|i| xs[(i as isize - offset - start) as usize].re)
        .collect()
}

fn check_band(f_lo: f64, f_hi: f64, fs: f64) -> Result<(), DspError> {
    if !(f_lo > 0.0 && f_lo < f_hi && f_hi < fs / 2.0) {
        return Err(DspError::InvalidBand {
            f_lo,
            f_hi,
            sample_rate: fs,
        });
    }
    Ok(())
}

/// Zero-phase band-pass between `f_lo` and `f_hi` (Hz).
///
/// Flat passband, raised-cosine skirts of [`TRANSITION_HZ`] outside it and an
/// exact zero beyond. The output no longer carries a shot-noise variance.
pub fn bandpass(trace: &Trace, f_lo: f64, f_hi: f64) -> Result<Trace, DspError> {
    let fs = trace.spec().sample_rate();
    check_band(f_lo, f_hi, fs)?;
    let y = apply_real_response(trace.samples(), fs, FILTER_PAD, |f| {
        bandpass_response(f, f_lo, f_hi)
    });
    let mut out = trace.with_samples(y)?;
    out.set_shot_variance(None);
    Ok(out)
}

/// One-sided Welch power spectral density in units²/Hz.
///
/// Returns `(frequencies, psd)` with `segment / 2 + 1` bins.
pub fn welch_psd(x: &[f64], fs: f64, segment: usize) -> Result<(Vec<f64>, Vec<f64>), DspError> {
    if !segment.is_power_of_two() || segment < 2 || segment > x.len() {
        return Err(DspError::InvalidSegment {
            segment,
            n: x.len(),
        });
    }
    let hop = segment / 2;
    let n_segments = (x.len() - segment) / hop + 1;
    let window: Vec<f64> = (0..segment)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment as f64).cos())
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment);
    let n_bins = segment / 2 + 1;

    // Fixed-size groups summed in index order keep the reduction deterministic.
    const GROUP: usize = 16;
    let groups: Vec<Vec<f64>> = (0..n_segments.div_ceil(GROUP))
        .into_par_iter()
        .map(|g| {
            let mut acc = vec![0.0; n_bins];
            let mut buf = vec![Complex64::new(0.0, 0.0); segment];
            for s in g * GROUP..((g + 1) * GROUP).min(n_segments) {
                let seg = &x[s * hop..s * hop + segment];
                let mean = seg.iter().sum::<f64>() / segment as f64;
                for (b, (v, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
                    *b = Complex64::new((v - mean) * w, 0.0);
                }
                fft.process(&mut buf);
                for (a, c) in acc.iter_mut().zip(&buf[..n_bins]) {
                    *a += c.norm_sqr();
                }
            }
            acc
        })
        .collect();
    let mut psd = vec![0.0; n_bins];
    for g in &groups {
        for (p, v) in psd.iter_mut().zip(g) {
            *p += v;
        }
    }
    let norm = 1.0 / (fs * window_power * n_segments as f64);
    for (k, p) in psd.iter_mut().enumerate() {
        let one_sided = if k == 0 || k == n_bins - 1 { 1.0 } else { 2.0 };
        *p *= norm * one_sided;
    }
    let freqs = (0..n_bins)
        .map(|k| k as f64 * fs / segment as f64)
        .collect();
    Ok((freqs, psd))
}

/// Intensity-difference spectrum of a pair against a shot-noise reference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub frequencies: Vec<f64>,
    pub psd: Vec<f64>,
    pub reference_psd: Vec<f64>,
    pub squeezing_db_curve: Vec<f64>,
    pub band: (f64, f64),
    /// Mean of `squeezing_db_curve` over bins inside `band`.
    pub in_band_mean_db: f64,
}

fn difference(pair: &TracePair) -> Vec<f64> {
    pair.a()
        .samples()
        .iter()
        .zip(pair.b().samples())
        .map(|(a, b)| a - b)
        .collect()
}

/// Welch PSD of `a - b` for `pair` and `reference`, their ratio in dB, and
/// its mean over `band` (Hz).
pub fn difference_spectrum(
    pair: &TracePair,
    reference: &TracePair,
    segment: usize,
    band: (f64, f64),
) -> Result<SpectrumEstimate, DspError> {
    validate_pair(pair.a(), pair.b())?;
    validate_pair(reference.a(), reference.b())?;
    let fs = pair.spec().sample_rate();
    if reference.spec().sample_rate() != fs {
        return Err(crate::error::TraceError::MismatchedClock {
            a: fs,
            b: reference.spec().sample_rate(),
        }
        .into());
    }
    check_band(band.0, band.1, fs)?;
    let (frequencies, psd) = welch_psd(&difference(pair), fs, segment)?;
    let (_, reference_psd) = welch_psd(&difference(reference), fs, segment)?;
    let squeezing_db_curve: Vec<f64> = psd
        .iter()
        .zip(&reference_psd)
        .map(|(p, r)| {
            if *p == *r {
                0.0
            } else {
                10.0 * (p / r).log10()
            }
        })
        .collect();
    let in_band: Vec<f64> = frequencies
        .iter()
        .zip(&squeezing_db_curve)
        .filter(|(f, _)| **f >= band.0 && **f <= band.1)
        .map(|(_, s)| *s)
        .collect();
    let in_band_mean_db = in_band.iter().sum::<f64>() / in_band.len().max(1) as f64;
    Ok(SpectrumEstimate {
        frequencies,
        psd,
        reference_psd,
        squeezing_db_curve,
        band,
        in_band_mean_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::gaussian_noise;
    use crate::trace::{Channel, DigitizerSpec};

    fn tone_trace(freq: f64, n: usize) -> Trace {
        let spec = DigitizerSpec::new(2e9, n, 8, 255.0).unwrap();
        let x = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / 2e9).sin())
            .collect();
        Trace::new(x, spec, Channel::Probe, 0.0).unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn fast_len_is_smooth_and_minimal() {
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(7), 8);
        assert_eq!(next_fast_len(11), 12);
        assert_eq!(next_fast_len(4_000_000), 4_000_000);
        assert_eq!(next_fast_len(4_000_001), 4_050_000);
        let smooth = |mut m: usize| {
            for p in [2, 3, 5] {
                while m.is_multiple_of(p) {
                    m /= p;
                }
            }
            m == 1
        };
        for n in 1..2000 {
            assert_eq!(next_fast_len(n), (n..).find(|&m| smooth(m)).unwrap());
        }
    }

    #[test]
    fn reflection_indices() {
        let n = 4;
        let got: Vec<usize> = (-4..8).map(|i| reflect_index(i, n)).collect();
        assert_eq!(got, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }

    #[test]
    fn passband_tone_preserved() {
        let n = 1 << 20;
        let t = tone_trace(2.5e6, n);
        let y = bandpass(&t, 1.5e6, 3.5e6).unwrap();
        let mid = n / 4..3 * n / 4;
        let gain_db = 20.0 * (rms(&y.samples()[mid.clone()]) / rms(&t.samples()[mid])).log10();
        assert!(gain_db.abs() < 0.1, "gain {gain_db} dB");
    }

    #[test]
    fn stopband_tone_rejected() {
        let n = 1 << 20;
        let t = tone_trace(100e3, n);
        let y = bandpass(&t, 1.5e6, 3.5e6).unwrap();
        let mid = n / 4..3 * n / 4;
        let att_db = 20.0 * (rms(&y.samples()[mid.clone()]) / rms(&t.samples()[mid])).log10();
        assert!(att_db < -60.0, "attenuation only {att_db} dB");
    }

    #[test]
    fn rejects_bad_band() {
        let t = tone_trace(1e6, 1024);
        assert!(bandpass(&t, 3.5e6, 1.5e6).is_err());
        assert!(bandpass(&t, 0.0, 1.5e6).is_err());
        assert!(bandpass(&t, 1.5e6, 1.5e9).is_err());
    }

    #[test]
    fn bandpass_is_shift_equivariant() {
        let n = 1 << 18;
        let x = gaussian_noise(3, 1, n, 1.0);
        let spec = DigitizerSpec::new(2e9, n, 8, 255.0).unwrap();
        let shift = 37;
        let shifted: Vec<f64> = (0..n)
            .map(|i| if i >= shift { x[i - shift] } else { 0.0 })
            .collect();
        let ya = bandpass(
            &Trace::new(x, spec, Channel::Probe, 0.0).unwrap(),
            1.5e6,
            3.5e6,
        )
        .unwrap();
        let yb = bandpass(
            &Trace::new(shifted, spec, Channel::Probe, 0.0).unwrap(),
            1.5e6,
            3.5e6,
        )
        .unwrap();
        // Compare well away from both ends where edge handling differs.
        let scale = rms(ya.samples());
        let worst = (n / 4..3 * n / 4)
            .map(|i| (yb.samples()[i] - ya.samples()[i - shift]).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3 * scale, "worst {}", worst / scale);
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let n = 3000;
        let x = gaussian_noise(9, 1, n, 1.0);
        let w: Vec<f64> = (0..200).map(|k| (-(k as f64) / 30.0).exp()).collect();
        let offset = 17;
        let fast = convolve_reflect(&x, &w, offset);
        for i in [0usize, 1, 500, 1777, n - 1] {
            let direct: f64 = w
                .iter()
                .enumerate()
                .map(|(j, wj)| wj * x[reflect_index(i as isize - offset - j as isize, n)])
                .sum();
            assert!((fast[i] - direct).abs() < 1e-10, "i={i}");
        }
    }

    #[test]
    fn welch_white_noise_level() {
        let n = 1 << 18;
        let fs = 2e9;
        let x = gaussian_noise(1, 1, n, 3.0);
        let (f, p) = welch_psd(&x, fs, 1024).unwrap();
        assert_eq!(f.len(), 513);
        // One-sided density of white noise: 2 var / fs.
        let expected = 2.0 * 9.0 / fs;
        let mean = p[10..500].iter().sum::<f64>() / 490.0;
        assert!((mean / expected - 1.0).abs() < 0.02);
        assert!(welch_psd(&x, fs, 1000).is_err());
    }
}
