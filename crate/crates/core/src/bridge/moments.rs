use rayon::prelude::*;

use super::simpson;
use crate::engine::{run, PopulationSnapshot, RunConfig};
use crate::error::{ensure_finite, BbmError, Result};
use crate::stochastic::{phi, RngStreamKey};

/// Largest horizon accepted by [`many_to_one_check`] without an override.
pub const M1_MAX_T: f64 = 4.0;
/// Largest horizon accepted by [`many_to_two_check`].
pub const M2_MAX_T: f64 = 3.0;

/// Bounded functional of a path through its terminal value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FunctionalSpec {
    Const(f64),
    /// `1{B_end >= a}`
    TerminalAbove(f64),
    /// `1{B_end <= a}`
    TerminalBelow(f64),
}

impl FunctionalSpec {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            FunctionalSpec::Const(c) => c,
            FunctionalSpec::TerminalAbove(a) => f64::from(u8::from(x >= a)),
            FunctionalSpec::TerminalBelow(a) => f64::from(u8::from(x <= a)),
        }
    }

    /// `E f(w + N(0, var))`.
    pub fn cond_expect(&self, w: f64, var: f64) -> f64 {
        if var <= 0.0 {
            return self.eval(w);
        }
        let sd = var.sqrt();
        match *self {
            FunctionalSpec::Const(c) => c,
            FunctionalSpec::TerminalAbove(a) => phi((w - a) / sd),
            FunctionalSpec::TerminalBelow(a) => phi((a - w) / sd),
        }
    }

    fn threshold(&self) -> Option<f64> {
        match *self {
            FunctionalSpec::Const(_) => None,
            FunctionalSpec::TerminalAbove(a) | FunctionalSpec::TerminalBelow(a) => Some(a),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            FunctionalSpec::Const(c) => {
                ensure_finite("f", c)?;
                if c < 0.0 {
                    return Err(BbmError::Domain {
                        name: "f",
                        value: c,
                        reason: "functionals must be non-negative",
                    });
                }
                Ok(())
            }
            FunctionalSpec::TerminalAbove(a) | FunctionalSpec::TerminalBelow(a) => ensure_finite("a", a),
        }
    }

    fn sum_over(&self, snap: &PopulationSnapshot) -> f64 {
        snap.positions().map(|x| self.eval(x)).sum()
    }
}

/// Both sides of a moment identity: a Monte Carlo mean over BBM runs and its
/// single- or two-path value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentCheck {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    /// `(lhs - rhs) / sqrt(lhs_se^2 + rhs_se^2)`; 0 when both sides agree exactly.
    pub z: f64,
    pub trials: u64,
}

impl MomentCheck {
    fn new(samples: &[f64], rhs: f64) -> Self {
        let n = samples.len() as f64;
        let lhs = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - lhs).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let lhs_se = (var / n).sqrt();
        let diff = lhs - rhs;
        let z = if diff == 0.0 { 0.0 } else { diff / lhs_se };
        Self {
            lhs,
            lhs_se,
            rhs,
            rhs_se: 0.0,
            z,
            trials: samples.len() as u64,
        }
    }
}

fn check_trials(n: u64) -> Result<()> {
    if n < 2 {
        return Err(BbmError::Domain {
            name: "trials",
            value: n as f64,
            reason: "at least two trials are required",
        });
    }
    Ok(())
}

/// `E sum_u f(X_u(t))` against `e^t E f(B_t)`.
///
/// Horizons above [`M1_MAX_T`] are rejected unless `override_guard` is set.
pub fn many_to_one_check(
    f: FunctionalSpec,
    t: f64,
    n_trials: u64,
    stream: RngStreamKey,
    override_guard: bool,
) -> Result<MomentCheck> {
    f.validate()?;
    check_trials(n_trials)?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(BbmError::Domain {
            name: "t",
            value: t,
            reason: "must be positive",
        });
    }
    if t > M1_MAX_T && !override_guard {
        return Err(BbmError::Domain {
            name: "t",
            value: t,
            reason: "beyond the population cost guard (t <= 4)",
        });
    }
    let samples: Vec<f64> = (0..n_trials)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut cfg = RunConfig::event(t, stream.derive(i));
            cfg.record_genealogy = false;
            let out = run(cfg, &mut ())?;
            Ok(f.sum_over(&out.snapshots[0]))
        })
        .collect::<Result<_>>()?;
    let rhs = t.exp() * f.cond_expect(0.0, t);
    Ok(MomentCheck::new(&samples, rhs))
}

/// `E (sum_{u in N_t} f(X_u(t))) (sum_{v in N_s} g(X_v(s)))` against the
/// two-path formula. The integral over the coincidence time uses a composite
/// midpoint rule with `quadrature_nodes` nodes; inner expectations are
/// integrated over the shared Gaussian position.
pub fn many_to_two_check(
    f: FunctionalSpec,
    g: FunctionalSpec,
    s: f64,
    t: f64,
    quadrature_nodes: usize,
    n_trials: u64,
    stream: RngStreamKey,
) -> Result<MomentCheck> {
    f.validate()?;
    g.validate()?;
    check_trials(n_trials)?;
    ensure_finite("s", s)?;
    ensure_finite("t", t)?;
    if !(0.0 <= s && s <= t && t <= M2_MAX_T) {
        return Err(BbmError::Config(format!(
            "many-to-two needs 0 <= s <= t <= 3, got s = {s}, t = {t}"
        )));
    }
    if t == 0.0 {
        return Err(BbmError::Domain {
            name: "t",
            value: t,
            reason: "must be positive",
        });
    }
    if quadrature_nodes < 64 {
        return Err(BbmError::Domain {
            name: "quadrature_nodes",
            value: quadrature_nodes as f64,
            reason: "at least 64 nodes are required",
        });
    }
    let samples: Vec<f64> = (0..n_trials)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut cfg = RunConfig::event(t, stream.derive(i));
            cfg.record_genealogy = false;
            cfg.snapshot_times = if s == t { vec![t] } else { vec![s, t] };
            let out = run(cfg, &mut ())?;
            let snap_s = &out.snapshots[0];
            let snap_t = out.snapshots.last().unwrap();
            Ok(f.sum_over(snap_t) * g.sum_over(snap_s))
        })
        .collect::<Result<_>>()?;
    Ok(MomentCheck::new(
        &samples,
        many_to_two_rhs(f, g, s, t, quadrature_nodes),
    ))
}

/// Two-path side of the second moment identity.
pub fn many_to_two_rhs(f: FunctionalSpec, g: FunctionalSpec, s: f64, t: f64, nodes: usize) -> f64 {
    let diag = t.exp() * shared_expect(f, g, s, s, t);
    let h = s / nodes as f64;
    let mut integral = 0.0;
    for k in 0..nodes {
        let gamma = (k as f64 + 0.5) * h;
        integral += 2.0 * (t + s - gamma).exp() * shared_expect(f, g, gamma, s, t);
    }
    diag + integral * h
}

/// `E f(B1_t) g(B2_s)` for two Brownian paths that coincide up to `gamma`.
fn shared_expect(f: FunctionalSpec, g: FunctionalSpec, gamma: f64, s: f64, t: f64) -> f64 {
    let (vf, vg) = (t - gamma, s - gamma);
    let integrand = |w: f64| f.cond_expect(w, vf) * g.cond_expect(w, vg);
    if gamma <= 0.0 {
        return integrand(0.0);
    }
    if f.threshold().is_none() && g.threshold().is_none() {
        return integrand(0.0);
    }
    let sd = gamma.sqrt();
    let density = |w: f64| (-0.5 * w * w / gamma).exp() / (2.0 * std::f64::consts::PI * gamma).sqrt();
    // split at the thresholds so the integrand is smooth on every piece
    let mut cuts = vec![-12.0 * sd, 12.0 * sd];
    for a in [f.threshold(), g.threshold()].into_iter().flatten() {
        if a.abs() < 12.0 * sd {
            cuts.push(a);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2)
        .map(|w| {
            // endpoints are evaluated as one-sided limits so jumps sit between pieces
            let nudge = 1e-12 * (w[1] - w[0]);
            simpson(|x| density(x) * integrand(x), w[0] + nudge, w[1] - nudge, 2000)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    #[test]
    fn constant_rhs_has_closed_form() {
        let v = many_to_two_rhs(FunctionalSpec::Const(1.0), FunctionalSpec::Const(1.0), 1.0, 2.0, 256);
        assert_relative_eq!(v, 2.0 * E.powi(3) - E * E, max_relative = 1e-5);
        let zero = many_to_two_rhs(FunctionalSpec::Const(0.0), FunctionalSpec::Const(0.0), 1.0, 2.0, 64);
        assert_eq!(zero, 0.0);
        // s = 0: only the diagonal term survives
        let f = FunctionalSpec::TerminalAbove(0.5);
        let v = many_to_two_rhs(f, FunctionalSpec::Const(1.0), 0.0, 2.0, 64);
        assert_relative_eq!(v, 2f64.exp() * phi(-0.5 / 2f64.sqrt()), max_relative = 1e-12);
    }

    #[test]
    fn indicator_rhs_against_bivariate_quadrature() {
        // P(B_t >= a, B_s >= b) by direct 2-D Simpson over (B_s, B_t - B_s)
        let (s, t, a, b) = (1.0f64, 2.0f64, 0.5, -0.2);
        let inner = shared_expect(
            FunctionalSpec::TerminalAbove(a),
            FunctionalSpec::TerminalAbove(b),
            s,
            s,
            t,
        );
        let direct = simpson(
            |x| {
                let dens = (-0.5 * x * x / s).exp() / (2.0 * std::f64::consts::PI * s).sqrt();
                dens * phi((x - a) / (t - s).sqrt())
            },
            b,
            12.0,
            20_000,
        );
        assert_relative_eq!(inner, direct, max_relative = 1e-9);
    }

    #[test]
    fn guards() {
        let k = RngStreamKey::root(0);
        let one = FunctionalSpec::Const(1.0);
        assert!(many_to_one_check(one, 4.5, 10, k, false).is_err());
        assert!(many_to_two_check(one, one, 2.0, 1.0, 64, 10, k).is_err());
        assert!(many_to_two_check(one, one, 1.0, 3.5, 64, 10, k).is_err());
        assert!(many_to_two_check(one, one, 1.0, 2.0, 32, 10, k).is_err());
        let zero = FunctionalSpec::Const(0.0);
        let c = many_to_one_check(zero, 1.0, 10, k, false).unwrap();
        assert_eq!((c.lhs, c.rhs, c.z), (0.0, 0.0, 0.0));
        let c = many_to_two_check(zero, zero, 1.0, 2.0, 64, 10, k).unwrap();
        assert_eq!((c.lhs, c.rhs, c.z), (0.0, 0.0, 0.0));
    }

    #[test]
    fn small_batteries_pass() {
        let k = RngStreamKey::root(42);
        let c = many_to_one_check(FunctionalSpec::TerminalBelow(-0.3), 2.0, 20_000, k, false).unwrap();
        assert!(c.z.abs() <= 5.0, "{c:?}");
        let c = many_to_two_check(
            FunctionalSpec::TerminalAbove(1.0),
            FunctionalSpec::TerminalBelow(0.2),
            0.7,
            1.5,
            128,
            20_000,
            k.derive(1),
        )
        .unwrap();
        assert!(c.z.abs() <= 5.0, "{c:?}");
    }
}
