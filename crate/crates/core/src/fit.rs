//! Staged recovery of `(sigma0, tau0, sigma, eta)` from MI curves.
//!
//! `sigma0` comes from a Gaussian fit to the unobstructed curve. On the
//! channel curve, `tau0` is the sub-grid peak position, `sigma` is the unique
//! spread whose model FWHM equals the measured one, and `eta` follows from
//! the peak height.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FitError, MiError};
use crate::mi::fwhm;
use crate::model::{g_closed, model_fwhm, peak_value, ModelParams, GAUSSIAN_FWHM_FACTOR};
use crate::params::FitResult;
use crate::trace::MiCurve;

/// Relative slack on the unbroadened-width floor before it counts as a failure.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub sigma0: f64,
    pub peak: f64,
    pub center: f64,
    /// Over the fitted main lobe, curve units.
    pub residual_rms: f64,
}

struct LmOutcome {
    x: Vec<f64>,
    cost: f64,
}

/// Levenberg-Marquardt with Marquardt diagonal scaling. Converged when the
/// gradient norm falls to `1e-10` of its starting value, or when no step can
/// lower the cost any further at machine precision.
fn levenberg_marquardt(
    residuals: impl Fn(&[f64]) -> Vec<f64>,
    jacobian: impl Fn(&[f64]) -> DMatrix<f64>,
    x0: Vec<f64>,
) -> Result<LmOutcome, FitError> {
    let cost = |x: &[f64]| residuals(x).iter().map(|r| r * r).sum::<f64>();
    let mut x = x0;
    let mut c = cost(&x);
    if !c.is_finite() {
        return Err(FitError::FitDiverged("non-finite starting cost".into()));
    }
    let mut lambda = 1e-3;
    let mut g0 = None;
    for _ in 0..1000 {
        let r = DVector::from_vec(residuals(&x));
        let j = jacobian(&x);
        let jt = j.transpose();
        let g = &jt * &r;
        let gn = g.norm();
        let g0v = *g0.get_or_insert(gn);
        if gn <= 1e-10 * g0v || gn == 0.0 {
            return Ok(LmOutcome { x, cost: c });
        }
        let jtj = &jt * &j;
        let mut improved = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let tc = cost(&trial);
            if tc.is_finite() && tc < c {
                let unchanged = trial.iter().zip(&x).all(|(a, b)| a == b);
                x = trial;
                c = tc;
                lambda = (lambda / 3.0).max(1e-12);
                improved = !unchanged;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            // Cost is at its floating-point minimum along every damped step.
            return Ok(LmOutcome { x, cost: c });
        }
    }
    Err(FitError::FitDiverged("iteration limit reached".into()))
}

fn interior_peak(curve: &MiCurve) -> Result<usize, FitError> {
    let i = curve.argmax();
    if i == 0 || i + 1 == curve.len() {
        return Err(MiError::NoPeak.into());
    }
    Ok(i)
}

/// Least-squares `peak * g(t - center; sigma0)` over the main lobe, the
/// contiguous run around the maximum that stays above 10 % of it.
pub fn fit_gaussian(curve: &MiCurve) -> Result<GaussianFit, FitError> {
    let i = interior_peak(curve)?;
    let y = curve.mi();
    let cut = 0.1 * y[i];
    let mut lo = i;
    while lo > 0 && y[lo - 1] >= cut {
        lo -= 1;
    }
    let mut hi = i;
    while hi + 1 < y.len() && y[hi + 1] >= cut {
        hi += 1;
    }
    if hi - lo + 1 < 4 {
        return Err(FitError::FitDiverged(
            "main lobe has fewer than 4 points".into(),
        ));
    }
    // Work in ns about the grid peak, values relative to the peak.
    let scale = y[i];
    let t0 = curve.delays()[i];
    let xs: Vec<f64> = curve.delays()[lo..=hi]
        .iter()
        .map(|d| (d - t0) * 1e9)
        .collect();
    let ys: Vec<f64> = y[lo..=hi].iter().map(|v| v / scale).collect();
    let width0 = fwhm(curve)
        .map(|w| w.width * 1e9 / GAUSSIAN_FWHM_FACTOR)
        .unwrap_or((xs[xs.len() - 1] - xs[0]) / 4.0);

    let model = |p: &[f64], x: f64| p[0] * (-(x - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp();
    let residuals = |p: &[f64]| xs.iter().zip(&ys).map(|(&x, &y)| model(p, x) - y).collect();
    let jacobian = |p: &[f64]| {
        DMatrix::from_fn(xs.len(), 3, |r, c| {
            let x = xs[r];
            let e = (-(x - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp();
            match c {
                0 => e,
                1 => p[0] * e * (x - p[1]) / (p[2] * p[2]),
                _ => p[0] * e * (x - p[1]).powi(2) / p[2].powi(3),
            }
        })
    };
    let out = levenberg_marquardt(residuals, jacobian, vec![1.0, 0.0, width0])?;
    let p = &out.x;
    if !(p[0] > 0.0 && p[2].abs() > 0.0 && p.iter().all(|v| v.is_finite())) {
        return Err(FitError::FitDiverged(format!("unphysical solution {p:?}")));
    }
    Ok(GaussianFit {
        sigma0: p[2].abs() * 1e-9,
        peak: p[0] * scale,
        center: t0 + p[1] * 1e-9,
        residual_rms: (out.cost / xs.len() as f64).sqrt() * scale,
    })
}

/// Peak position and height from the parabola through the maximum and its
/// two neighbours.
pub fn quadratic_peak(curve: &MiCurve) -> Result<(f64, f64), FitError> {
    let i = interior_peak(curve)?;
    let y = curve.mi();
    let (ym, y0, yp) = (y[i - 1], y[i], y[i + 1]);
    let denom = ym - 2.0 * y0 + yp;
    let delta = if denom < 0.0 {
        0.5 * (ym - yp) / denom
    } else {
        0.0
    };
    let position = curve.delays()[i] + delta * curve.step();
    let height = y0 - 0.25 * (ym - yp) * delta;
    Ok((position, height))
}

/// Spread whose model FWHM equals `width` at fixed `sigma0`. Zero at the
/// unbroadened floor.
pub fn sigma_for_width(width: f64, sigma0: f64) -> Result<f64, FitError> {
    let floor = GAUSSIAN_FWHM_FACTOR * sigma0;
    if width < floor * (1.0 - FLOOR_SLACK) {
        return Err(FitError::BracketFailure {
            measured: width,
            floor,
        });
    }
    if width <= floor * (1.0 + FLOOR_SLACK) {
        return Ok(0.0);
    }
    let mut hi = sigma0;
    while model_fwhm(sigma0, hi) < width {
        hi *= 2.0;
        if hi > 1e6 * sigma0 {
            return Err(FitError::FitDiverged("width bracket did not close".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if model_fwhm(sigma0, mid) < width {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn residual_rms(curve: &MiCurve, p: &ModelParams) -> f64 {
    let ss: f64 = curve
        .delays()
        .iter()
        .zip(curve.mi())
        .map(|(&t, &y)| (g_closed(t, p) - y).powi(2))
        .sum();
    (ss / curve.len() as f64).sqrt()
}

/// Staged fit of a channel curve normalized by the unobstructed peak.
pub fn fit_channel(curve: &MiCurve, sigma0: f64) -> Result<FitResult, FitError> {
    if !(sigma0.is_finite() && sigma0 > 0.0) {
        return Err(FitError::InvalidParams(format!(
            "sigma0 must be > 0, got {sigma0}"
        )));
    }
    let (tau0, height) = quadratic_peak(curve)?;
    let width = fwhm(curve)?.width;
    let sigma = sigma_for_width(width, sigma0)?;
    let eta = height / peak_value(1.0, sigma0, sigma);
    let p = ModelParams {
        eta,
        tau0,
        sigma,
        sigma0,
    };
    Ok(FitResult {
        sigma0,
        tau0,
        sigma,
        eta,
        fwhm_unobstructed: GAUSSIAN_FWHM_FACTOR * sigma0,
        fwhm_channel: width,
        peak_ratio: height,
        residual_rms: residual_rms(curve, &p),
    })
}

/// Full-curve least-squares refinement of `(eta, tau0, sigma)` from a staged
/// fit, `sigma0` held fixed.
pub fn refine_channel(curve: &MiCurve, start: &FitResult) -> Result<FitResult, FitError> {
    let sigma0 = start.sigma0;
    let ts: Vec<f64> = curve.delays().to_vec();
    let ys: Vec<f64> = curve.mi().to_vec();
    // Parameters: eta, tau0 [ns], sigma [ns] (kept positive through its magnitude).
    let params = |x: &[f64]| ModelParams {
        eta: x[0],
        tau0: x[1] * 1e-9,
        sigma: x[2].abs() * 1e-9,
        sigma0,
    };
    let residuals = |x: &[f64]| {
        let p = params(x);
        ts.iter()
            .zip(&ys)
            .map(|(&t, &y)| g_closed(t, &p) - y)
            .collect::<Vec<f64>>()
    };
    let jacobian = |x: &[f64]| {
        let mut j = DMatrix::zeros(ts.len(), 3);
        for c in 0..3 {
            let h = 1e-6 * x[c].abs().max(1e-3);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[c] += h;
            xm[c] -= h;
            let (rp, rm) = (residuals(&xp), residuals(&xm));
            for r in 0..ts.len() {
                j[(r, c)] = (rp[r] - rm[r]) / (2.0 * h);
            }
        }
        j
    };
    let x0 = vec![
        start.eta,
        start.tau0 * 1e9,
        start.sigma.max(0.05 * sigma0) * 1e9,
    ];
    let out = levenberg_marquardt(residuals, jacobian, x0)?;
    let p = params(&out.x);
    p.validate()?;
    Ok(FitResult {
        sigma0,
        tau0: p.tau0,
        sigma: p.sigma,
        eta: p.eta,
        fwhm_unobstructed: start.fwhm_unobstructed,
        fwhm_channel: model_fwhm(sigma0, p.sigma),
        peak_ratio: peak_value(p.eta, sigma0, p.sigma),
        residual_rms: (out.cost / ts.len() as f64).sqrt(),
    })
}
