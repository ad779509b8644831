//! Histogram mutual information, delay scans, averaging and peak width.
//!
//! Bin edges are equal-width over each trace's whole-record `[min, max]` and
//! do not change with the delay, so every shift of a scan is binned
//! identically. Marginals are always summed from the joint histogram, which
//! keeps every estimate finite and nonnegative.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MiError;
use crate::trace::{validate_pair, MiCurve, Trace, TracePair};

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_STEP: f64 = 0.5e-9;
pub const DEFAULT_RANGE: f64 = 300e-9;

/// Joint counts over an `n_a x n_b` grid, row-major in `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    counts: Vec<u64>,
    n_a: usize,
    n_b: usize,
    edges_a: Vec<f64>,
    edges_b: Vec<f64>,
    total: u64,
}

impl JointHistogram {
    /// Histogram from raw counts with unit-spaced edges `0..=n`.
    pub fn from_counts(counts: Vec<u64>, n_a: usize, n_b: usize) -> Result<Self, MiError> {
        if n_a < 2 || n_b < 2 {
            return Err(MiError::TooFewBins(n_a.min(n_b)));
        }
        if counts.len() != n_a * n_b {
            return Err(MiError::GridMismatch);
        }
        let edges = |n: usize| (0..=n).map(|i| i as f64).collect();
        Ok(Self::assemble(counts, n_a, n_b, edges(n_a), edges(n_b)))
    }

    fn assemble(
        counts: Vec<u64>,
        n_a: usize,
        n_b: usize,
        edges_a: Vec<f64>,
        edges_b: Vec<f64>,
    ) -> Self {
        let total = counts.iter().sum();
        Self {
            counts,
            n_a,
            n_b,
            edges_a,
            edges_b,
            total,
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n_b + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_a, self.n_b)
    }

    pub fn edges_a(&self) -> &[f64] {
        &self.edges_a
    }

    pub fn edges_b(&self) -> &[f64] {
        &self.edges_b
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn marginal_a(&self) -> Vec<u64> {
        self.counts
            .chunks(self.n_b)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn marginal_b(&self) -> Vec<u64> {
        let mut m = vec![0u64; self.n_b];
        for row in self.counts.chunks(self.n_b) {
            m.iter_mut().zip(row).for_each(|(s, c)| *s += c);
        }
        m
    }

    /// Axes exchanged.
    pub fn transpose(&self) -> Self {
        let mut counts = vec![0u64; self.counts.len()];
        for i in 0..self.n_a {
            for j in 0..self.n_b {
                counts[j * self.n_a + i] = self.get(i, j);
            }
        }
        Self::assemble(
            counts,
            self.n_b,
            self.n_a,
            self.edges_b.clone(),
            self.edges_a.clone(),
        )
    }
}

/// Equal-width bin indices of a trace over its own `[min, max]`.
#[derive(Debug, Clone)]
struct Binning {
    index: Vec<u32>,
    edges: Vec<f64>,
}

fn bin_trace(x: &[f64], n_bins: usize) -> Result<Binning, MiError> {
    if n_bins < 2 {
        return Err(MiError::TooFewBins(n_bins));
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return Err(MiError::DegenerateRange);
    }
    let width = (hi - lo) / n_bins as f64;
    let scale = 1.0 / width;
    let last = (n_bins - 1) as u32;
    let index = x
        .iter()
        .map(|&v| (((v - lo) * scale) as u32).min(last))
        .collect();
    let edges = (0..=n_bins)
        .map(|k| {
            if k == n_bins {
                hi
            } else {
                lo + k as f64 * width
            }
        })
        .collect();
    Ok(Binning { index, edges })
}

/// Both arms of a pair binned once, ready for repeated shifted histograms.
#[derive(Debug, Clone)]
pub struct BinnedPair {
    /// Bin index of `a`, premultiplied by `n_b`.
    row: Vec<u32>,
    col: Vec<u32>,
    n_a: usize,
    n_b: usize,
    edges_a: Vec<f64>,
    edges_b: Vec<f64>,
}

impl BinnedPair {
    pub fn new(a: &Trace, b: &Trace, n_bins_a: usize, n_bins_b: usize) -> Result<Self, MiError> {
        validate_pair(a, b)?;
        if n_bins_a < 2 || n_bins_b < 2 {
            return Err(MiError::TooFewBins(n_bins_a.min(n_bins_b)));
        }
        if (n_bins_a as u64) * (n_bins_b as u64) > u32::MAX as u64 {
            return Err(MiError::TooFewBins(0));
        }
        let ba = bin_trace(a.samples(), n_bins_a)?;
        let bb = bin_trace(b.samples(), n_bins_b)?;
        let nb = n_bins_b as u32;
        Ok(Self {
            row: ba.index.iter().map(|i| i * nb).collect(),
            col: bb.index,
            n_a: n_bins_a,
            n_b: n_bins_b,
            edges_a: ba.edges,
            edges_b: bb.edges,
        })
    }

    pub fn len(&self) -> usize {
        self.row.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row.is_empty()
    }

    /// Raw counts pairing `a[i]` with `b[i - shift]` for `i` in `window`.
    fn count(&self, shift: isize, window: (usize, usize)) -> Vec<u32> {
        let (lo, hi) = window;
        let cols = &self.col[(lo as isize - shift) as usize..(hi as isize - shift) as usize];
        self.count_against(&self.row[lo..hi], cols)
    }

    fn count_against(&self, rows: &[u32], cols: &[u32]) -> Vec<u32> {
        let cells = self.n_a * self.n_b;
        // Four interleaved tables break the store-to-load dependency on
        // repeated cells.
        let mut h = vec![0u32; 4 * cells];
        let (h0, rest) = h.split_at_mut(cells);
        let (h1, rest) = rest.split_at_mut(cells);
        let (h2, h3) = rest.split_at_mut(cells);
        let mut rc = rows.chunks_exact(4);
        let mut cc = cols.chunks_exact(4);
        for (r, c) in (&mut rc).zip(&mut cc) {
            h0[(r[0] + c[0]) as usize] += 1;
            h1[(r[1] + c[1]) as usize] += 1;
            h2[(r[2] + c[2]) as usize] += 1;
            h3[(r[3] + c[3]) as usize] += 1;
        }
        for (r, c) in rc.remainder().iter().zip(cc.remainder()) {
            h0[(r + c) as usize] += 1;
        }
        for k in 0..cells {
            h0[k] += h1[k] + h2[k] + h3[k];
        }
        h.truncate(cells);
        h
    }

    /// Joint histogram at one shift over `window = [lo, hi)` of arm a.
    pub fn histogram(
        &self,
        shift: isize,
        window: (usize, usize),
    ) -> Result<JointHistogram, MiError> {
        self.check_window(shift, window)?;
        let counts = self
            .count(shift, window)
            .into_iter()
            .map(u64::from)
            .collect();
        Ok(JointHistogram::assemble(
            counts,
            self.n_a,
            self.n_b,
            self.edges_a.clone(),
            self.edges_b.clone(),
        ))
    }

    /// MI in bits at one shift, optionally Miller-Madow corrected.
    pub fn mi(
        &self,
        shift: isize,
        window: (usize, usize),
        bias_correction: bool,
    ) -> Result<f64, MiError> {
        self.check_window(shift, window)?;
        let counts = self.count(shift, window);
        Ok(mi_from_counts(&counts, self.n_a, self.n_b, bias_correction))
    }

    /// MI pairing `a[i]` with `b[(i + rotation) mod n]` over `window`.
    pub fn rotated_mi(
        &self,
        rotation: usize,
        window: (usize, usize),
        bias_correction: bool,
    ) -> Result<f64, MiError> {
        self.check_window(0, window)?;
        let n = self.len();
        let (lo, hi) = window;
        let cols: Vec<u32> = (lo..hi).map(|i| self.col[(i + rotation) % n]).collect();
        let counts = self.count_against(&self.row[lo..hi], &cols);
        Ok(mi_from_counts(&counts, self.n_a, self.n_b, bias_correction))
    }

    fn check_window(&self, shift: isize, (lo, hi): (usize, usize)) -> Result<(), MiError> {
        let n = self.len();
        let ok =
            lo < hi && hi <= n && lo as isize - shift >= 0 && hi as isize - shift <= n as isize;
        if ok {
            Ok(())
        } else {
            Err(MiError::TraceTooShort {
                needed: hi.max(lo) + shift.unsigned_abs(),
                n,
            })
        }
    }
}

/// Joint histogram of two aligned traces over their full length.
pub fn histogram2d(
    a: &Trace,
    b: &Trace,
    n_bins_a: usize,
    n_bins_b: usize,
) -> Result<JointHistogram, MiError> {
    let binned = BinnedPair::new(a, b, n_bins_a, n_bins_b)?;
    binned.histogram(0, (0, binned.len()))
}

struct Entropies {
    mi_nats: f64,
    occupied_joint: usize,
    occupied_a: usize,
    occupied_b: usize,
    total: f64,
}

fn entropies<T: Copy + Into<u64>>(counts: &[T], n_a: usize, n_b: usize) -> Entropies {
    let mut ma = vec![0u64; n_a];
    let mut mb = vec![0u64; n_b];
    let mut occupied_joint = 0;
    for (i, row) in counts.chunks(n_b).enumerate() {
        for (j, &c) in row.iter().enumerate() {
            let c: u64 = c.into();
            ma[i] += c;
            mb[j] += c;
            occupied_joint += (c > 0) as usize;
        }
    }
    let total: u64 = ma.iter().sum();
    let nt = total as f64;
    let mut sum = 0.0;
    for (i, row) in counts.chunks(n_b).enumerate() {
        if ma[i] == 0 {
            continue;
        }
        let ra = ma[i] as f64;
        for (j, &c) in row.iter().enumerate() {
            let c: u64 = c.into();
            if c > 0 {
                let c = c as f64;
                sum += c * (c * nt / (ra * mb[j] as f64)).ln();
            }
        }
    }
    Entropies {
        mi_nats: if total > 0 { sum / nt } else { 0.0 },
        occupied_joint,
        occupied_a: ma.iter().filter(|&&c| c > 0).count(),
        occupied_b: mb.iter().filter(|&&c| c > 0).count(),
        total: nt,
    }
}

fn mi_from_counts<T: Copy + Into<u64>>(counts: &[T], n_a: usize, n_b: usize, correct: bool) -> f64 {
    let e = entropies(counts, n_a, n_b);
    let mut bits = e.mi_nats / LN_2;
    if correct {
        bits -= miller_madow_terms(&e);
    }
    bits.max(0.0)
}

fn miller_madow_terms(e: &Entropies) -> f64 {
    (e.occupied_joint as f64 - e.occupied_a as f64 - e.occupied_b as f64 + 1.0)
        / (2.0 * e.total * LN_2)
}

/// Plug-in MI in bits, `sum P(a,b) log2[P(a,b) / (P(a) P(b))]`.
pub fn mi_from_hist(h: &JointHistogram) -> Result<f64, MiError> {
    if h.total == 0 {
        return Err(MiError::EmptyHistogram);
    }
    Ok(mi_from_counts(&h.counts, h.n_a, h.n_b, false))
}

/// Miller-Madow estimate of the plug-in estimator's upward bias, bits.
pub fn miller_madow_bias(h: &JointHistogram) -> Result<f64, MiError> {
    if h.total == 0 {
        return Err(MiError::EmptyHistogram);
    }
    Ok(miller_madow_terms(&entropies(&h.counts, h.n_a, h.n_b)))
}

/// Bias-corrected MI, clamped at zero.
pub fn mi_from_hist_corrected(h: &JointHistogram) -> Result<f64, MiError> {
    if h.total == 0 {
        return Err(MiError::EmptyHistogram);
    }
    Ok(mi_from_counts(&h.counts, h.n_a, h.n_b, true))
}

/// Expected plug-in MI of two independent variables, `(m_a - 1)(m_b - 1) / (2 N ln 2)`.
pub fn independence_floor(n_bins_a: usize, n_bins_b: usize, n: u64) -> f64 {
    ((n_bins_a - 1) * (n_bins_b - 1)) as f64 / (2.0 * n as f64 * LN_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanSettings {
    /// Delay step, seconds; a whole number of sample periods.
    pub step: f64,
    /// Scan covers `[-range, +range]`, seconds.
    pub range: f64,
    pub n_bins_a: usize,
    pub n_bins_b: usize,
    /// Samples dropped at each end of the record before any shift.
    pub edge_exclusion: usize,
    pub bias_correction: bool,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            range: DEFAULT_RANGE,
            n_bins_a: DEFAULT_BINS,
            n_bins_b: DEFAULT_BINS,
            edge_exclusion: 0,
            bias_correction: false,
        }
    }
}

impl ScanSettings {
    /// Step in samples and the number of steps on each side of zero.
    pub fn grid(&self, sample_rate: f64) -> Result<(usize, usize), MiError> {
        let period = 1.0 / sample_rate;
        let ratio = self.step * sample_rate;
        let k = ratio.round();
        if !(k >= 1.0 && (ratio - k).abs() < 1e-6 * k) {
            return Err(MiError::StepNotSampleAligned {
                step: self.step,
                period,
            });
        }
        let steps = (self.range / self.step + 1e-9).floor();
        if !(steps >= 1.0) {
            return Err(MiError::StepNotSampleAligned {
                step: self.step,
                period,
            });
        }
        Ok((k as usize, steps as usize))
    }

    /// Window of arm a shared by every shift, `[lo, hi)`.
    pub fn window(&self, n: usize, sample_rate: f64) -> Result<(usize, usize), MiError> {
        let (k, steps) = self.grid(sample_rate)?;
        let margin = self.edge_exclusion + k * steps;
        if 2 * margin >= n {
            return Err(MiError::TraceTooShort {
                needed: 2 * margin + 1,
                n,
            });
        }
        Ok((margin, n - margin))
    }
}

/// MI versus relative delay over `[-range, +range]`.
///
/// Every shift uses the same window of arm a, so all points share one
/// sample count. Shifts run in parallel and are collected in delay order.
pub fn mi_delay_scan(pair: &TracePair, settings: &ScanSettings) -> Result<MiCurve, MiError> {
    Ok(mi_delay_scan_with_floor(pair, settings, 0)?.0)
}

/// Delay scan plus `surrogates` MI values with arm b circularly rotated by
/// lags in `[n/4, 3n/4)`. Rotation keeps each arm's autocorrelation and
/// removes cross-correlation, so the surrogates sample the estimator's bias
/// floor for this pair.
pub fn mi_delay_scan_with_floor(
    pair: &TracePair,
    settings: &ScanSettings,
    surrogates: usize,
) -> Result<(MiCurve, Vec<f64>), MiError> {
    let fs = pair.spec().sample_rate();
    let (k, steps) = settings.grid(fs)?;
    let n = pair.a().len();
    let window = settings.window(n, fs)?;
    let binned = BinnedPair::new(pair.a(), pair.b(), settings.n_bins_a, settings.n_bins_b)?;
    let floor = (0..surrogates)
        .into_par_iter()
        .map(|j| {
            binned.rotated_mi(
                n / 4 + j * (n / 2) / surrogates,
                window,
                settings.bias_correction,
            )
        })
        .collect::<Result<Vec<f64>, MiError>>()?;
    let shifts: Vec<isize> = (-(steps as isize)..=steps as isize)
        .map(|s| s * k as isize)
        .collect();
    let mi = shifts
        .par_iter()
        .map(|&s| binned.mi(s, window, settings.bias_correction))
        .collect::<Result<Vec<f64>, MiError>>()?;
    let delays = shifts.iter().map(|&s| s as f64 / fs).collect();
    Ok((MiCurve::new(delays, mi, None, 1, false)?, floor))
}

/// Pointwise mean with one-sample-standard-deviation spread (divisor `n - 1`).
pub fn average_curves(curves: &[MiCurve]) -> Result<MiCurve, MiError> {
    let first = curves.first().ok_or(MiError::NoCurves)?;
    let tol = 1e-9 * first.step();
    for c in &curves[1..] {
        if c.len() != first.len()
            || c.is_normalized() != first.is_normalized()
            || c.delays()
                .iter()
                .zip(first.delays())
                .any(|(x, y)| (x - y).abs() > tol)
        {
            return Err(MiError::GridMismatch);
        }
    }
    let m = curves.len() as f64;
    let mean: Vec<f64> = (0..first.len())
        .map(|i| curves.iter().map(|c| c.mi()[i]).sum::<f64>() / m)
        .collect();
    let spread: Vec<f64> = (0..first.len())
        .map(|i| {
            if curves.len() < 2 {
                return 0.0;
            }
            let ss: f64 = curves.iter().map(|c| (c.mi()[i] - mean[i]).powi(2)).sum();
            (ss / (m - 1.0)).sqrt()
        })
        .collect();
    let n_repeats = curves.iter().map(|c| c.n_repeats()).sum();
    Ok(MiCurve::new(
        first.delays().to_vec(),
        mean,
        Some(spread),
        n_repeats,
        first.is_normalized(),
    )?)
}

/// Divide values and spread by `reference_peak`.
pub fn normalize_curve(curve: &MiCurve, reference_peak: f64) -> Result<MiCurve, MiError> {
    if !(reference_peak.is_finite() && reference_peak > 0.0) {
        return Err(MiError::NonpositiveReference(reference_peak));
    }
    let mi = curve.mi().iter().map(|v| v / reference_peak).collect();
    let spread = curve
        .spread()
        .map(|s| s.iter().map(|v| v / reference_peak).collect());
    let mut out = curve.with_values(mi, spread)?;
    out.set_normalized(true);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fwhm {
    pub width: f64,
    pub left: f64,
    pub right: f64,
    /// More than two half-maximum crossings; `left`/`right` are the outermost.
    pub multimodal: bool,
}

/// Full width at half maximum, crossings linearly interpolated.
pub fn fwhm(curve: &MiCurve) -> Result<Fwhm, MiError> {
    let y = curve.mi();
    let x = curve.delays();
    let peak = curve.argmax();
    if peak == 0 || peak == y.len() - 1 {
        return Err(MiError::NoPeak);
    }
    let half = 0.5 * y[peak];
    let above = |i: usize| y[i] >= half;
    let crossing = |i: usize| x[i] + (half - y[i]) / (y[i + 1] - y[i]) * (x[i + 1] - x[i]);
    let crossings: Vec<usize> = (0..y.len() - 1)
        .filter(|&i| above(i) != above(i + 1))
        .collect();
    let left = crossings.iter().copied().filter(|&i| i < peak).min();
    let right = crossings.iter().copied().filter(|&i| i >= peak).max();
    let (Some(l), Some(r)) = (left, right) else {
        return Err(MiError::HalfMaximumOutOfRange);
    };
    let multimodal = crossings.len() > 2;
    if multimodal {
        log::warn!(
            "curve crosses half maximum {} times; reporting outermost crossings",
            crossings.len()
        );
    }
    let (left, right) = (crossing(l), crossing(r));
    Ok(Fwhm {
        width: right - left,
        left,
        right,
        multimodal,
    })
}
