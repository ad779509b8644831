//! Analytic MI-curve model: a Gaussian envelope `g` smeared by the
//! two-sided exponential delay density `p`.
//!
//! `G(t) = eta * integral g(t - tau) p(tau) dtau`, with
//! `g(t) = exp(-t^2 / (2 sigma0^2))` and
//! `p(tau) = exp(-|tau - tau0| / sigma) / (2 sigma)`.

use std::f64::consts::{PI, SQRT_2};

use crate::error::FitError;
use crate::quad;
use crate::special::erfcx;

/// FWHM of a Gaussian in units of its standard deviation, `2 sqrt(2 ln 2)`.
pub const GAUSSIAN_FWHM_FACTOR: f64 = 2.354_820_045_030_949_3;

/// Model parameters, SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub eta: f64,
    pub tau0: f64,
    pub sigma: f64,
    pub sigma0: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), FitError> {
        let ok = self.eta.is_finite()
            && self.eta > 0.0
            && self.tau0.is_finite()
            && self.sigma.is_finite()
            && self.sigma >= 0.0
            && self.sigma0.is_finite()
            && self.sigma0 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(FitError::InvalidParams(format!("{self:?}")))
        }
    }
}

pub fn gaussian_g(t: f64, sigma0: f64) -> f64 {
    (-t * t / (2.0 * sigma0 * sigma0)).exp()
}

pub fn exp_kernel_p(tau: f64, tau0: f64, sigma: f64) -> f64 {
    (-(tau - tau0).abs() / sigma).exp() / (2.0 * sigma)
}

/// `exp(sigma0^2 / 2 sigma^2 + x / sigma) * erfc((sigma0^2 + x sigma) / (sqrt2 sigma sigma0))`
/// without forming either overflowing factor.
fn e_term(x: f64, sigma: f64, sigma0: f64) -> f64 {
    let y = (sigma0 * sigma0 + x * sigma) / (SQRT_2 * sigma * sigma0);
    let envelope = (-x * x / (2.0 * sigma0 * sigma0)).exp();
    if y >= 0.0 {
        envelope * erfcx(y)
    } else {
        // erfc(y) = 2 - erfc(-y); the exponent below is <= -sigma0^2 / 2 sigma^2.
        let a = sigma0 * sigma0 / (2.0 * sigma * sigma) + x / sigma;
        2.0 * a.exp() - envelope * erfcx(-y)
    }
}

/// Closed form of `G(t)`. `sigma = 0` gives the unbroadened `eta g(t - tau0)`.
pub fn g_closed(t: f64, p: &ModelParams) -> f64 {
    let big_t = t - p.tau0;
    if p.sigma == 0.0 {
        return p.eta * gaussian_g(big_t, p.sigma0);
    }
    let pre = p.eta * p.sigma0 * (2.0 * PI).sqrt() / (4.0 * p.sigma);
    pre * (e_term(-big_t, p.sigma, p.sigma0) + e_term(big_t, p.sigma, p.sigma0))
}

/// Adaptive-quadrature evaluation of the convolution integral over
/// `tau0 ± 40 sigma`, absolute tolerance 1e-12.
pub fn g_numeric(t: f64, p: &ModelParams) -> Result<f64, FitError> {
    p.validate()?;
    if p.sigma == 0.0 {
        return Err(FitError::InvalidParams(
            "numeric convolution needs sigma > 0".into(),
        ));
    }
    // In u = (tau - tau0) / sigma the density is exp(-|u|) / 2.
    let big_t = (t - p.tau0) / p.sigma;
    let w = p.sigma0 / p.sigma;
    let integrand = |u: f64| 0.5 * (-u.abs()).exp() * gaussian_g(big_t - u, w);
    let mut breaks: Vec<f64> = (-10..=10).map(|k| big_t + k as f64 * w).collect();
    breaks.push(0.0);
    let v = quad::integrate(integrand, -40.0, 40.0, &breaks, 4.0, 1e-12 / p.eta)?;
    Ok(p.eta * v)
}

/// Largest `|g_closed - g_numeric|` over `points` uniform times in
/// `[t_lo, t_hi]`, relative to the largest `g_numeric` there.
pub fn oracle_deviation(
    p: &ModelParams,
    t_lo: f64,
    t_hi: f64,
    points: usize,
) -> Result<f64, FitError> {
    if points < 2 || !(t_lo < t_hi) {
        return Err(FitError::InvalidParams(format!(
            "sweep [{t_lo}, {t_hi}] with {points} points"
        )));
    }
    let dt = (t_hi - t_lo) / (points - 1) as f64;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..points {
        let t = t_lo + i as f64 * dt;
        let n = g_numeric(t, p)?;
        worst = worst.max((g_closed(t, p) - n).abs());
        scale = scale.max(n);
    }
    Ok(worst / scale)
}

/// `G(tau0)` in stable form,
/// `eta sigma0 sqrt(2 pi) / (2 sigma) * erfcx(sigma0 / (sqrt2 sigma))`.
pub fn peak_value(eta: f64, sigma0: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return eta;
    }
    eta * sigma0 * (2.0 * PI).sqrt() / (2.0 * sigma) * erfcx(sigma0 / (SQRT_2 * sigma))
}

/// FWHM of `G` (independent of `eta` and `tau0`).
pub fn model_fwhm(sigma0: f64, sigma: f64) -> f64 {
    let p = ModelParams {
        eta: 1.0,
        tau0: 0.0,
        sigma,
        sigma0,
    };
    let half = 0.5 * peak_value(1.0, sigma0, sigma);
    if sigma == 0.0 {
        return GAUSSIAN_FWHM_FACTOR * sigma0;
    }
    // G is even and decreasing for t > 0.
    let mut hi = sigma0 + sigma;
    while g_closed(hi, &p) > half {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g_closed(mid, &p) > half {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo + hi
}
