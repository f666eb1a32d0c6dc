use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::StandardNormal;

use super::stream::RngStreamKey;
use crate::error::{ensure_finite, BbmError, Result};

/// 3 / (2 sqrt 2), the logarithmic correction of the front.
pub const LOG_CORRECTION: f64 = 3.0 / (2.0 * SQRT_2);

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> Result<f64> {
    ensure_finite("z", z)?;
    Ok(phi(z))
}

/// Unchecked standard normal distribution function; NaN in, NaN out.
#[inline]
pub(crate) fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Density of N(0, t) at `x`.
pub fn gaussian_density(t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(BbmError::Domain {
            name: "t",
            value: t,
            reason: "variance must be positive",
        });
    }
    ensure_finite("x", x)?;
    Ok((-x * x / (2.0 * t)).exp() / (2.0 * PI * t).sqrt())
}

/// Deterministic centering of the maximum, sqrt(2) t - 3/(2 sqrt 2) log t.
pub fn centering(t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(BbmError::Domain {
            name: "t",
            value: t,
            reason: "centering is defined for t > 0",
        });
    }
    Ok(m_t(t))
}

#[inline]
pub(crate) fn m_t(t: f64) -> f64 {
    SQRT_2 * t - LOG_CORRECTION * t.ln()
}

/// Arguments of the localization envelope `min(s, t - s)^alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeParams {
    pub t: f64,
    pub alpha: f64,
    pub s: f64,
}

impl EnvelopeParams {
    pub fn new(t: f64, alpha: f64, s: f64) -> Result<Self> {
        let p = Self { t, alpha, s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("t", self.t)?;
        ensure_finite("s", self.s)?;
        validate_alpha(self.alpha)?;
        if !(self.t > 0.0) {
            return Err(BbmError::Domain {
                name: "t",
                value: self.t,
                reason: "must be positive",
            });
        }
        if self.s < 0.0 || self.s > self.t {
            return Err(BbmError::Domain {
                name: "s",
                value: self.s,
                reason: "must lie in [0, t]",
            });
        }
        Ok(())
    }
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 0.5 {
        Ok(())
    } else {
        Err(BbmError::Domain {
            name: "alpha",
            value: alpha,
            reason: "must lie in (0, 1/2]",
        })
    }
}

pub fn envelope(p: EnvelopeParams) -> Result<f64> {
    p.validate()?;
    Ok(envelope_unchecked(p.t, p.alpha, p.s))
}

#[inline]
pub(crate) fn envelope_unchecked(t: f64, alpha: f64, s: f64) -> f64 {
    s.min(t - s).powf(alpha)
}

/// First Gaussian draw of `stream`, scaled to `N(mean, variance)`.
pub fn sample_gaussian(stream: RngStreamKey, mean: f64, variance: f64) -> Result<f64> {
    ensure_finite("mean", mean)?;
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(BbmError::Domain {
            name: "variance",
            value: variance,
            reason: "must be non-negative",
        });
    }
    if variance == 0.0 {
        return Ok(mean);
    }
    let z: f64 = stream.rng().sample(StandardNormal);
    Ok(mean + variance.sqrt() * z)
}

/// Mean and variance of a Brownian bridge from `a` (time 0) to `y` (time `gamma`) at time `r`.
#[inline]
pub fn bridge_moments(a: f64, y: f64, gamma: f64, r: f64) -> (f64, f64) {
    (a + (r / gamma) * (y - a), r * (gamma - r) / gamma)
}

/// Position at interior time `r` of a Brownian bridge from `a` to `y` over `[0, gamma]`.
pub fn sample_bridge_interior(stream: RngStreamKey, a: f64, y: f64, gamma: f64, r: f64) -> Result<f64> {
    ensure_finite("a", a)?;
    ensure_finite("y", y)?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(BbmError::Domain {
            name: "gamma",
            value: gamma,
            reason: "bridge length must be positive",
        });
    }
    if !(r > 0.0 && r < gamma) {
        return Err(BbmError::Domain {
            name: "r",
            value: r,
            reason: "must lie strictly inside (0, gamma)",
        });
    }
    let (mean, var) = bridge_moments(a, y, gamma, r);
    sample_gaussian(stream, mean, var)
}
