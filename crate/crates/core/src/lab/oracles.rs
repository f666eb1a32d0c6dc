//! Closed-form bridge probabilities and moment identities against their
//! Monte Carlo estimates.

use rand::Rng;

use super::par_trials;
use super::report::{ExperimentReport, Table, Verdict};
use crate::bridge::{
    bridge_nonneg_prob, bridge_subinterval_nonneg_prob, bridge_two_point_line_bound, many_to_one_check,
    many_to_two_check, mc_bridge_event_prob, Barrier, BridgeEventSpec, Direction, FunctionalSpec, MomentCheck,
};
use crate::error::{BbmError, Result};
use crate::stochastic::RngStreamKey;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BridgeCheckConfig {
    pub paths: u64,
    pub steps: usize,
    /// Random tuples for the line-bound dominance check.
    pub tuples: u64,
    pub tuple_paths: u64,
}

impl Default for BridgeCheckConfig {
    fn default() -> Self {
        Self {
            paths: 100_000,
            steps: 1000,
            tuples: 50,
            tuple_paths: 20_000,
        }
    }
}

/// One closed form against its grid estimate. The estimate may exceed the
/// exact value by up to `allowance` from discrete monitoring.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedFormRow {
    pub case: String,
    pub exact: f64,
    pub mc: f64,
    pub se: f64,
    pub allowance: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineBoundRow {
    pub z1: f64,
    pub z2: f64,
    pub r1: f64,
    pub r2: f64,
    pub t: f64,
    pub bound: f64,
    pub exact: f64,
    pub mc: f64,
    pub se: f64,
    pub dominated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BridgeCheckResult {
    pub closed_forms: Vec<ClosedFormRow>,
    pub line_bounds: Vec<LineBoundRow>,
}

fn closed_form_row(
    case: &str,
    exact: f64,
    spec: &BridgeEventSpec,
    cfg: &BridgeCheckConfig,
    key: RngStreamKey,
) -> Result<ClosedFormRow> {
    let est = mc_bridge_event_prob(spec, cfg.paths, cfg.steps, key)?;
    let allowance = spec.grid_bias_allowance(cfg.steps)?.unwrap_or(0.0);
    let diff = est.estimate - exact;
    Ok(ClosedFormRow {
        case: case.to_owned(),
        exact,
        mc: est.estimate,
        se: est.se,
        allowance,
        pass: diff >= -3.0 * est.se && diff <= 3.0 * est.se + allowance,
    })
}

/// Random `(Z1, Z2, r1, r2, t)` with bound below 1, by rejection.
fn random_tuple(key: RngStreamKey) -> (f64, f64, f64, f64, f64) {
    let mut rng = key.rng();
    loop {
        let t = rng.random_range(1.0..20.0);
        let r1 = rng.random_range(0.0..0.3) * t;
        let r2 = rng.random_range(0.0..0.3) * t;
        let z1 = rng.random_range(0.0..2.0);
        let z2 = rng.random_range(0.0..2.0);
        if bridge_two_point_line_bound(z1, z2, r1, r2, t).is_ok_and(|b| b < 1.0) {
            return (z1, z2, r1, r2, t);
        }
    }
}

pub fn bridge_check(cfg: &BridgeCheckConfig, stream: RngStreamKey) -> Result<BridgeCheckResult> {
    if cfg.tuple_paths < 100 {
        return Err(BbmError::Config("tuple_paths must be at least 100".into()));
    }
    let nonneg = BridgeEventSpec {
        horizon: 2.0,
        start: 1.0,
        end: 1.0,
        r1: 0.0,
        r2: 0.0,
        barrier: Barrier::Constant(0.0),
        direction: Direction::StayAbove,
    };
    let sub = BridgeEventSpec {
        horizon: 2.0,
        start: 0.0,
        end: 1.0,
        r1: 1.0,
        r2: 0.0,
        ..nonneg
    };
    let closed_forms = vec![
        closed_form_row(
            "nonneg t=2 x=1 y=1",
            bridge_nonneg_prob(2.0, 1.0, 1.0)?,
            &nonneg,
            cfg,
            stream.derive(0),
        )?,
        closed_form_row(
            "subinterval r=1 gamma=2 y=1",
            bridge_subinterval_nonneg_prob(1.0, 2.0, 1.0)?,
            &sub,
            cfg,
            stream.derive(1),
        )?,
    ];
    let tuple_stream = stream.derive(2);
    let line_bounds = par_trials(cfg.tuples, tuple_stream, |_, key| {
        let (z1, z2, r1, r2, t) = random_tuple(key.derive(0));
        let spec = BridgeEventSpec {
            horizon: t,
            start: 0.0,
            end: 0.0,
            r1,
            r2,
            barrier: Barrier::Line { z1, z2 },
            direction: Direction::StayBelow,
        };
        let bound = bridge_two_point_line_bound(z1, z2, r1, r2, t)?;
        let est = mc_bridge_event_prob(&spec, cfg.tuple_paths, cfg.steps, key.derive(1))?;
        Ok(LineBoundRow {
            z1,
            z2,
            r1,
            r2,
            t,
            bound,
            exact: spec.exact_prob()?.unwrap_or(f64::NAN),
            mc: est.estimate,
            se: est.se,
            dominated: est.estimate <= bound + 3.0 * est.se,
        })
    })?;
    Ok(BridgeCheckResult {
        closed_forms,
        line_bounds,
    })
}

impl BridgeCheckResult {
    pub fn closed_form_verdict(&self) -> Verdict {
        Verdict {
            pass: self.closed_forms.iter().all(|r| r.pass),
            detail: self
                .closed_forms
                .iter()
                .map(|r| {
                    format!(
                        "{}: exact {:.6} mc {:.6} se {:.6} allowance {:.2e}",
                        r.case, r.exact, r.mc, r.se, r.allowance
                    )
                })
                .collect::<Vec<_>>()
                .join("; "),
        }
    }

    pub fn line_bound_verdict(&self) -> Verdict {
        let failed = self.line_bounds.iter().filter(|r| !r.dominated).count();
        Verdict {
            pass: failed == 0,
            detail: format!("{failed} of {} tuples with mc > bound + 3 SE", self.line_bounds.len()),
        }
    }

    pub fn report(&self, cfg: &BridgeCheckConfig, seed: u64) -> ExperimentReport {
        let mut rep = ExperimentReport::new("bridge-check");
        rep.echo("seed", seed);
        rep.echo("paths", cfg.paths);
        rep.echo("steps", cfg.steps);
        rep.echo("tuples", cfg.tuples);
        rep.echo("tuple_paths", cfg.tuple_paths);
        let mut cf = Table::new(
            "bridge_closed_forms",
            &["case", "exact", "mc", "se", "grid_allowance", "z", "pass"],
        );
        for r in &self.closed_forms {
            cf.push(vec![
                r.case.clone().into(),
                r.exact.into(),
                r.mc.into(),
                r.se.into(),
                r.allowance.into(),
                ((r.mc - r.exact) / r.se).into(),
                r.pass.into(),
            ]);
        }
        let mut lb = Table::new(
            "bridge_line_bound",
            &[
                "tuple",
                "Z1",
                "Z2",
                "r1",
                "r2",
                "t",
                "bound",
                "exact",
                "mc",
                "se",
                "dominated",
            ],
        );
        for (i, r) in self.line_bounds.iter().enumerate() {
            lb.push(vec![
                i.into(),
                r.z1.into(),
                r.z2.into(),
                r.r1.into(),
                r.r2.into(),
                r.t.into(),
                r.bound.into(),
                r.exact.into(),
                r.mc.into(),
                r.se.into(),
                r.dominated.into(),
            ]);
        }
        rep.tables = vec![cf, lb];
        rep.notes
            .push("grid monitoring can only over-estimate stay events; allowance is the shifted-barrier excess".into());
        let (a, b) = (self.closed_form_verdict(), self.line_bound_verdict());
        rep.verdict = Some(Verdict {
            pass: a.pass && b.pass,
            detail: format!("{}; {}", a.detail, b.detail),
        });
        rep
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentBatteryConfig {
    pub trials: u64,
    pub nodes: usize,
    pub max_abs_z: f64,
}

impl Default for MomentBatteryConfig {
    fn default() -> Self {
        Self {
            trials: 100_000,
            nodes: 256,
            max_abs_z: 5.0,
        }
    }
}

/// The standard battery: first moment of the population size at `t = 1`,
/// first moment of `1{X >= 3}` at `t = 3`, and the second moment of the
/// population sizes at `(s, t) = (1, 2)`.
pub fn moment_battery(cfg: &MomentBatteryConfig, stream: RngStreamKey) -> Result<Vec<(String, MomentCheck)>> {
    Ok(vec![
        (
            "many-to-one f=1 t=1".to_owned(),
            many_to_one_check(FunctionalSpec::Const(1.0), 1.0, cfg.trials, stream.derive(0), false)?,
        ),
        (
            "many-to-one f=1{x>=3} t=3".to_owned(),
            many_to_one_check(
                FunctionalSpec::TerminalAbove(3.0),
                3.0,
                cfg.trials,
                stream.derive(1),
                false,
            )?,
        ),
        (
            "many-to-two f=g=1 s=1 t=2".to_owned(),
            many_to_two_check(
                FunctionalSpec::Const(1.0),
                FunctionalSpec::Const(1.0),
                1.0,
                2.0,
                cfg.nodes,
                cfg.trials,
                stream.derive(2),
            )?,
        ),
    ])
}

pub fn moment_report(rows: &[(String, MomentCheck)], cfg: &MomentBatteryConfig, seed: u64) -> ExperimentReport {
    let mut rep = ExperimentReport::new("moment-check");
    rep.echo("seed", seed);
    rep.echo("trials", cfg.trials);
    rep.echo("nodes", cfg.nodes);
    rep.echo("max_abs_z", cfg.max_abs_z);
    let mut table = Table::new(
        "moments",
        &["check", "lhs", "lhs_se", "rhs", "rhs_se", "z", "trials", "pass"],
    );
    for (name, m) in rows {
        table.push(vec![
            name.clone().into(),
            m.lhs.into(),
            m.lhs_se.into(),
            m.rhs.into(),
            m.rhs_se.into(),
            m.z.into(),
            m.trials.into(),
            (m.z.abs() <= cfg.max_abs_z).into(),
        ]);
    }
    rep.tables = vec![table];
    let worst = rows.iter().map(|(_, m)| m.z.abs()).fold(0.0, f64::max);
    rep.verdict = Some(Verdict {
        pass: worst <= cfg.max_abs_z,
        detail: format!("largest |z| = {worst:.3} (limit {})", cfg.max_abs_z),
    });
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bridge_check() {
        let cfg = BridgeCheckConfig {
            paths: 4000,
            steps: 200,
            tuples: 5,
            tuple_paths: 2000,
        };
        let r = bridge_check(&cfg, RngStreamKey::root(8)).unwrap();
        assert!(r.closed_form_verdict().pass, "{:?}", r.closed_forms);
        assert!(r.line_bounds.iter().all(|l| l.bound < 1.0 && l.exact <= l.bound));
        assert!(r.line_bound_verdict().pass);
        assert_eq!(r.report(&cfg, 8).table("bridge_line_bound").unwrap().rows.len(), 5);
    }

    #[test]
    fn small_battery() {
        let cfg = MomentBatteryConfig {
            trials: 2000,
            ..Default::default()
        };
        let rows = moment_battery(&cfg, RngStreamKey::root(9)).unwrap();
        let rep = moment_report(&rows, &cfg, 9);
        assert!(rep.verdict.unwrap().pass);
        assert!((rows[0].1.rhs - std::f64::consts::E).abs() < 1e-12);
    }
}
