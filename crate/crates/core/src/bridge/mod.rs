//! Brownian-bridge probabilities in closed form, a grid Monte Carlo
//! estimator that can falsify them, and the first and second moment
//! identities of branching Brownian motion.

mod moments;

pub use moments::{many_to_one_check, many_to_two_check, FunctionalSpec, MomentCheck, M1_MAX_T, M2_MAX_T};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{ensure_finite, BbmError, Result};
use crate::stochastic::{envelope_unchecked, phi, RngStreamKey};

/// `-zeta(1/2) / sqrt(2 pi)`: discrete monitoring of a Brownian path with step
/// `h` behaves like continuous monitoring of a barrier moved `BGK_BETA * sqrt(h)`
/// away from the path.
pub const BGK_BETA: f64 = 0.582_597_157_939_010_7;

fn domain(name: &'static str, value: f64, reason: &'static str) -> BbmError {
    BbmError::Domain { name, value, reason }
}

/// Probability that a bridge from `x` to `y` over `[0, t]` stays non-negative.
pub fn bridge_nonneg_prob(t: f64, x: f64, y: f64) -> Result<f64> {
    ensure_finite("x", x)?;
    ensure_finite("y", y)?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(domain("t", t, "horizon must be positive"));
    }
    if x < 0.0 {
        return Err(domain("x", x, "endpoints must be non-negative"));
    }
    if y < 0.0 {
        return Err(domain("y", y, "endpoints must be non-negative"));
    }
    Ok(-(-2.0 * x * y / t).exp_m1())
}

/// Upper bound for a bridge from 0 to 0 over `[0, t]` to stay below the line
/// from `z1` to `z2` on `[r1, t - r2]`. The raw value is returned and may exceed 1.
pub fn bridge_two_point_line_bound(z1: f64, z2: f64, r1: f64, r2: f64, t: f64) -> Result<f64> {
    for (name, v) in [("Z1", z1), ("Z2", z2), ("r1", r1), ("r2", r2)] {
        ensure_finite(name, v)?;
        if v < 0.0 {
            return Err(domain(name, v, "must be non-negative"));
        }
    }
    ensure_finite("t", t)?;
    if !(t > r1 + r2) {
        return Err(domain("t", t, "must exceed r1 + r2"));
    }
    let zr1 = (1.0 - r1 / t) * z1 + (r1 / t) * z2;
    let zr2 = (r2 / t) * z1 + (1.0 - r2 / t) * z2;
    Ok(2.0 / (t - r1 - r2) * (zr1 + r1.sqrt()) * (zr2 + r2.sqrt()))
}

/// Probability that a bridge from 0 to `y` over `[0, gamma]` stays
/// non-negative on `[r, gamma]`, by reflection at time `r`.
pub fn bridge_subinterval_nonneg_prob(r: f64, gamma: f64, y: f64) -> Result<f64> {
    ensure_finite("gamma", gamma)?;
    ensure_finite("y", y)?;
    if !(r > 0.0 && r < gamma) {
        return Err(domain("r", r, "must lie in (0, gamma)"));
    }
    if !(y > 0.0) {
        return Err(domain("y", y, "endpoint must be positive"));
    }
    let mean = r / gamma * y;
    let sd = (r * (gamma - r) / gamma).sqrt();
    Ok(1.0 - 2.0 * phi(-mean / sd))
}

/// Probability that a bridge from `a` (time 0) to `y` (time `t`) is
/// non-negative at every time of `[r1, t - r2]`.
///
/// Closed form when `r1 = 0` or `r2 = 0`; otherwise one-dimensional quadrature
/// over the position at `r1`.
pub fn bridge_window_nonneg_prob(t: f64, a: f64, y: f64, r1: f64, r2: f64) -> Result<f64> {
    for (name, v) in [("t", t), ("a", a), ("y", y), ("r1", r1), ("r2", r2)] {
        ensure_finite(name, v)?;
    }
    if r1 < 0.0 || r2 < 0.0 {
        return Err(domain("r1", r1.min(r2), "window offsets must be non-negative"));
    }
    if !(t > r1 + r2) {
        return Err(domain("t", t, "must exceed r1 + r2"));
    }
    Ok(window_prob(t, a, y, r1, r2))
}

fn window_prob(t: f64, a: f64, y: f64, r1: f64, r2: f64) -> f64 {
    if r1 == 0.0 && a < 0.0 || r2 == 0.0 && y < 0.0 {
        return 0.0;
    }
    match (r1 == 0.0, r2 == 0.0) {
        (true, true) => -(-2.0 * a * y / t).exp_m1(),
        (false, true) => tail_window(t, a, y, r1),
        (true, false) => tail_window(t, y, a, r2),
        (false, false) => {
            let (mu, var) = (a + r1 / t * (y - a), r1 * (t - r1) / t);
            let sd = var.sqrt();
            let hi = mu.max(0.0) + 12.0 * sd;
            if hi <= 0.0 {
                return 0.0;
            }
            let lo = (mu - 12.0 * sd).max(0.0);
            let f = |u: f64| {
                let z = (u - mu) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()) * tail_window(t - r1, y, u, r2)
            };
            simpson(f, lo, hi, 4000)
        }
    }
}

/// Window `[r, t]` with `0 < r < t` and `y >= 0`.
fn tail_window(t: f64, a: f64, y: f64, r: f64) -> f64 {
    let sd = (r * (t - r) / t).sqrt();
    let mu = a + r / t * (y - a);
    let mu2 = (a * (t - r) - y * r) / t;
    let p = phi(mu / sd) - scaled_phi(-2.0 * a * y / t, mu2 / sd);
    p.clamp(0.0, 1.0)
}

/// `exp(e) * Phi(z)` without overflow when `e` is large and `Phi(z)` tiny.
fn scaled_phi(e: f64, z: f64) -> f64 {
    if e < 300.0 {
        return e.exp() * phi(z);
    }
    (e + ln_phi(z)).exp()
}

fn ln_phi(z: f64) -> f64 {
    if z > -30.0 {
        return phi(z).ln();
    }
    // Mills ratio expansion
    let z2 = z * z;
    -0.5 * z2 - (-z * (2.0 * std::f64::consts::PI).sqrt()).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
}

pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Barrier {
    Constant(f64),
    /// Affine line from `z1` at time 0 to `z2` at the horizon.
    Line {
        z1: f64,
        z2: f64,
    },
    /// Line from `z1` to `z2` plus `coeff * min(s, t - s)^alpha`.
    Envelope {
        z1: f64,
        z2: f64,
        coeff: f64,
        alpha: f64,
    },
}

impl Barrier {
    pub fn at(&self, s: f64, t: f64) -> f64 {
        match *self {
            Barrier::Constant(c) => c,
            Barrier::Line { z1, z2 } => (1.0 - s / t) * z1 + (s / t) * z2,
            Barrier::Envelope { z1, z2, coeff, alpha } => {
                (1.0 - s / t) * z1 + (s / t) * z2 + coeff * envelope_unchecked(t, alpha, s.clamp(0.0, t))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    StayAbove,
    StayBelow,
}

/// The event that a bridge from `start` to `end` over `[0, horizon]` stays on
/// one side of `barrier` at every time of `[r1, horizon - r2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BridgeEventSpec {
    pub horizon: f64,
    pub start: f64,
    pub end: f64,
    pub r1: f64,
    pub r2: f64,
    pub barrier: Barrier,
    pub direction: Direction,
}

impl BridgeEventSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("horizon", self.horizon),
            ("start", self.start),
            ("end", self.end),
            ("r1", self.r1),
            ("r2", self.r2),
        ] {
            ensure_finite(name, v)?;
        }
        if !(self.horizon > 0.0) {
            return Err(domain("horizon", self.horizon, "must be positive"));
        }
        if self.r1 < 0.0 || self.r2 < 0.0 {
            return Err(domain(
                "r1",
                self.r1.min(self.r2),
                "window offsets must be non-negative",
            ));
        }
        if !(self.r1 + self.r2 < self.horizon) {
            return Err(domain("r2", self.r2, "r1 + r2 must be below the horizon"));
        }
        if let Barrier::Envelope { alpha, .. } = self.barrier {
            if !(alpha >= 0.0) {
                return Err(domain("alpha", alpha, "must be non-negative"));
            }
        }
        Ok(())
    }

    fn holds(&self, s: f64, x: f64) -> bool {
        let b = self.barrier.at(s, self.horizon);
        match self.direction {
            Direction::StayAbove => x >= b,
            Direction::StayBelow => x <= b,
        }
    }

    /// Exact probability for constant and affine barriers.
    pub fn exact_prob(&self) -> Result<Option<f64>> {
        self.validate()?;
        Ok(self.shifted_prob(0.0))
    }

    /// Probability with the barrier moved `shift` away from the path.
    fn shifted_prob(&self, shift: f64) -> Option<f64> {
        let t = self.horizon;
        let (z1, z2) = match self.barrier {
            Barrier::Constant(c) => (c, c),
            Barrier::Line { z1, z2 } => (z1, z2),
            Barrier::Envelope { .. } => return None,
        };
        // subtracting the line keeps a Brownian bridge a Brownian bridge
        let (a, y) = match self.direction {
            Direction::StayAbove => (self.start - z1 + shift, self.end - z2 + shift),
            Direction::StayBelow => (z1 - self.start + shift, z2 - self.end + shift),
        };
        Some(window_prob(t, a, y, self.r1, self.r2))
    }

    /// Upper allowance for the excess of a discretely monitored estimate with
    /// `steps` equal steps over its continuous-time value.
    pub fn grid_bias_allowance(&self, steps: usize) -> Result<Option<f64>> {
        self.validate()?;
        let shift = BGK_BETA * (self.horizon / steps as f64).sqrt();
        Ok(match (self.shifted_prob(0.0), self.shifted_prob(shift)) {
            (Some(p0), Some(p1)) => Some((p1 - p0).max(0.0)),
            _ => None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub se: f64,
    pub hits: u64,
    pub n_paths: u64,
    pub steps: usize,
}

/// Monitoring times: `steps` equal steps over `[0, t]` plus the window ends,
/// restricted to the window.
fn monitor_times(spec: &BridgeEventSpec, steps: usize) -> Vec<f64> {
    let t = spec.horizon;
    let (lo, hi) = (spec.r1, t - spec.r2);
    let mut ts: Vec<f64> = (0..=steps).map(|k| t * k as f64 / steps as f64).collect();
    ts.push(lo);
    ts.push(hi);
    ts.retain(|&s| s >= lo && s <= hi);
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t);
    ts
}

/// Monte Carlo probability of `spec`, monitoring each bridge at `steps` equal
/// steps (plus the window ends). Discrete monitoring misses excursions between
/// grid times, so "stay" events are over-estimated.
pub fn mc_bridge_event_prob(
    spec: &BridgeEventSpec,
    n_paths: u64,
    steps: usize,
    stream: RngStreamKey,
) -> Result<McEstimate> {
    spec.validate()?;
    if n_paths < 100 {
        return Err(domain("n_paths", n_paths as f64, "at least 100 paths are required"));
    }
    if steps < 10 {
        return Err(domain("grid_steps", steps as f64, "at least 10 steps are required"));
    }
    let times = monitor_times(spec, steps);
    let hits: u64 = (0..n_paths)
        .into_par_iter()
        .map(|i| u64::from(sample_event(spec, &times, stream.derive(i))))
        .sum();
    let p = hits as f64 / n_paths as f64;
    Ok(McEstimate {
        estimate: p,
        se: (p * (1.0 - p) / n_paths as f64).sqrt(),
        hits,
        n_paths,
        steps,
    })
}

fn sample_event(spec: &BridgeEventSpec, times: &[f64], key: RngStreamKey) -> bool {
    let mut rng = key.rng();
    let t = spec.horizon;
    let y = spec.end;
    let (mut s, mut x) = (0.0, spec.start);
    for &u in times {
        if u > s {
            if u >= t {
                x = y;
            } else {
                let rest = t - s;
                let h = u - s;
                let mean = x + h / rest * (y - x);
                let var = h * (t - u) / rest;
                let z: f64 = StandardNormal.sample(&mut rng);
                x = mean + var.sqrt() * z;
            }
            s = u;
        }
        if !spec.holds(u, x) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nonneg_examples() {
        assert_eq!(bridge_nonneg_prob(1.0, 0.0, 3.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            bridge_nonneg_prob(2.0, 1.0, 1.0).unwrap(),
            0.632_120_558_828_557_7,
            epsilon = 1e-15
        );
        let p = bridge_nonneg_prob(1.0, 3.0, 4.0).unwrap();
        assert_abs_diff_eq!(p, 1.0 - (-24.0f64).exp(), epsilon = 1e-16);
        assert!(p < 1.0);
        assert!(bridge_nonneg_prob(1.0, -0.1, 1.0).is_err());
        assert!(bridge_nonneg_prob(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn nonneg_monotone_on_lattice() {
        for t in [0.5, 1.0, 3.0] {
            for i in 0..20 {
                for j in 0..20 {
                    let (x, y) = (0.2 * i as f64, 0.2 * j as f64);
                    let p = bridge_nonneg_prob(t, x, y).unwrap();
                    assert!((0.0..=1.0).contains(&p));
                    assert!(bridge_nonneg_prob(t, x + 0.2, y).unwrap() >= p);
                    assert!(bridge_nonneg_prob(t, x, y + 0.2).unwrap() >= p);
                }
            }
        }
    }

    #[test]
    fn line_bound_examples() {
        assert_eq!(bridge_two_point_line_bound(1.0, 1.0, 1.0, 1.0, 4.0).unwrap(), 4.0);
        assert_eq!(bridge_two_point_line_bound(0.0, 0.0, 0.0, 0.0, 3.0).unwrap(), 0.0);
        assert_eq!(bridge_two_point_line_bound(1.0, 0.0, 0.0, 0.0, 10.0).unwrap(), 0.0);
        assert!(bridge_two_point_line_bound(1.0, 1.0, 2.0, 2.0, 4.0).is_err());
        assert!(bridge_two_point_line_bound(-1.0, 1.0, 0.0, 0.0, 4.0).is_err());
    }

    #[test]
    fn subinterval_examples() {
        let p = bridge_subinterval_nonneg_prob(1.0, 2.0, 1.0).unwrap();
        // 1 - 2 Phi(-1/sqrt 2)
        assert_abs_diff_eq!(p, 0.520_499_877_813_046_5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            bridge_subinterval_nonneg_prob(1.0, 2.0, 100.0).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(bridge_subinterval_nonneg_prob(2.0, 2.0, 1.0).is_err());
        assert!(bridge_subinterval_nonneg_prob(1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn window_formula_reduces_to_the_special_cases() {
        for (r, g, y) in [(1.0, 2.0, 1.0), (0.3, 5.0, 2.5), (4.0, 5.0, 0.1)] {
            assert_abs_diff_eq!(
                bridge_window_nonneg_prob(g, 0.0, y, r, 0.0).unwrap(),
                bridge_subinterval_nonneg_prob(r, g, y).unwrap(),
                epsilon = 1e-13
            );
        }
        for (t, x, y) in [(2.0, 1.0, 1.0), (1.0, 0.3, 2.0)] {
            assert_abs_diff_eq!(
                bridge_window_nonneg_prob(t, x, y, 0.0, 0.0).unwrap(),
                bridge_nonneg_prob(t, x, y).unwrap(),
                epsilon = 1e-15
            );
            // a vanishing window converges to the full one
            let p = bridge_window_nonneg_prob(t, x, y, 1e-9, 1e-9).unwrap();
            assert_abs_diff_eq!(p, bridge_nonneg_prob(t, x, y).unwrap(), epsilon = 1e-4);
        }
        // reversal symmetry
        let a = bridge_window_nonneg_prob(3.0, 0.5, 1.5, 0.4, 1.1).unwrap();
        let b = bridge_window_nonneg_prob(3.0, 1.5, 0.5, 1.1, 0.4).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        // larger windows are harder to satisfy
        let c = bridge_window_nonneg_prob(3.0, 0.5, 1.5, 0.2, 0.4).unwrap();
        assert!(c <= a + 1e-12);
    }

    #[test]
    fn interior_window_against_direct_quadrature() {
        // P(B_r1 >= 0, B_r2' >= 0 and no crossing between) for a window with both ends
        // interior; compare against Monte Carlo with a fine grid.
        let spec = BridgeEventSpec {
            horizon: 2.0,
            start: -0.5,
            end: -0.5,
            r1: 0.5,
            r2: 0.5,
            barrier: Barrier::Constant(-1.5),
            direction: Direction::StayAbove,
        };
        let exact = spec.exact_prob().unwrap().unwrap();
        let mc = mc_bridge_event_prob(&spec, 40_000, 2000, RngStreamKey::root(8)).unwrap();
        let allow = spec.grid_bias_allowance(2000).unwrap().unwrap();
        assert!(mc.estimate - exact >= -4.0 * mc.se, "{} vs {exact}", mc.estimate);
        assert!(mc.estimate - exact <= 4.0 * mc.se + allow, "{} vs {exact}", mc.estimate);
    }

    #[test]
    fn mc_trivial_events() {
        let mut spec = BridgeEventSpec {
            horizon: 1.0,
            start: 0.0,
            end: 0.0,
            r1: 0.0,
            r2: 0.0,
            barrier: Barrier::Constant(1e9),
            direction: Direction::StayAbove,
        };
        let k = RngStreamKey::root(1);
        assert_eq!(mc_bridge_event_prob(&spec, 200, 10, k).unwrap().estimate, 0.0);
        spec.barrier = Barrier::Constant(-1e9);
        let m = mc_bridge_event_prob(&spec, 200, 10, k).unwrap();
        assert_eq!((m.estimate, m.se), (1.0, 0.0));
        assert!(mc_bridge_event_prob(&spec, 99, 10, k).is_err());
        assert!(mc_bridge_event_prob(&spec, 100, 9, k).is_err());
        spec.r1 = 0.6;
        spec.r2 = 0.5;
        assert!(mc_bridge_event_prob(&spec, 100, 10, k).is_err());
    }

    #[test]
    fn mc_is_deterministic() {
        let spec = BridgeEventSpec {
            horizon: 2.0,
            start: 1.0,
            end: 1.0,
            r1: 0.0,
            r2: 0.0,
            barrier: Barrier::Constant(0.0),
            direction: Direction::StayAbove,
        };
        let a = mc_bridge_event_prob(&spec, 1000, 50, RngStreamKey::root(3)).unwrap();
        let b = mc_bridge_event_prob(&spec, 1000, 50, RngStreamKey::root(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn allowance_shrinks_with_steps() {
        let spec = BridgeEventSpec {
            horizon: 2.0,
            start: 1.0,
            end: 1.0,
            r1: 0.0,
            r2: 0.0,
            barrier: Barrier::Constant(0.0),
            direction: Direction::StayAbove,
        };
        let a = spec.grid_bias_allowance(100).unwrap().unwrap();
        let b = spec.grid_bias_allowance(10_000).unwrap().unwrap();
        assert!(a > b && b > 0.0);
        let env = BridgeEventSpec {
            barrier: Barrier::Envelope {
                z1: 0.0,
                z2: 0.0,
                coeff: -1.0,
                alpha: 0.4,
            },
            ..spec
        };
        assert_eq!(env.grid_bias_allowance(100).unwrap(), None);
    }
}
