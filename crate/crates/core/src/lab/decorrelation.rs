//! Conditional decorrelation of the front at two times given the population
//! at an earlier time `R`, estimated by resampling the future from `F_R`.

use super::par_trials;
use super::report::{proportion, ExperimentReport, Table, Verdict};
use crate::engine::{run, PopulationSnapshot, RunConfig, Seed, Simulation};
use crate::error::{BbmError, Result};
use crate::observables::argmax_entry;
use crate::stochastic::{m_t, RngStreamKey};

pub const MAX_SPAN: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DecorrelationConfig {
    pub r: f64,
    pub s: f64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub outer: u64,
    pub inner: u64,
    /// Largest tolerated fraction of outer samples flagged as violations.
    pub max_violation_fraction: f64,
}

impl Default for DecorrelationConfig {
    fn default() -> Self {
        Self {
            r: 2.0,
            s: 6.0,
            t: 10.0,
            x: -1.0,
            y: -1.0,
            outer: 200,
            inner: 500,
            max_violation_fraction: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterSample {
    pub n_r: usize,
    pub p1: f64,
    pub p2: f64,
    pub p_l: f64,
    pub se1: f64,
    pub se2: f64,
    pub se_l: f64,
    pub diff: f64,
    /// Delta-method standard error of `p_L - p1 p2`.
    pub se_diff: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecorrelationResult {
    pub samples: Vec<OuterSample>,
}

fn validate(cfg: &DecorrelationConfig) -> Result<()> {
    if !(cfg.r > 0.0 && cfg.r < cfg.s && cfg.s < cfg.t) {
        return Err(BbmError::Config(format!(
            "decorrelation needs 0 < R < s < t, got R = {}, s = {}, t = {}",
            cfg.r, cfg.s, cfg.t
        )));
    }
    if cfg.t - cfg.r > MAX_SPAN {
        return Err(BbmError::Domain {
            name: "t - R",
            value: cfg.t - cfg.r,
            reason: "the resampled window must not exceed 10",
        });
    }
    if cfg.outer < 1 || cfg.inner < 2 {
        return Err(BbmError::Config("decorrelation needs outer >= 1 and inner >= 2".into()));
    }
    Ok(())
}

/// One resampled future from the population at `R`: `(A, B, L)`.
fn inner_trial(cfg: &DecorrelationConfig, pop: &PopulationSnapshot, key: RngStreamKey) -> Result<(bool, bool, bool)> {
    let seeds: Vec<Seed> = pop
        .entries
        .iter()
        .map(|e| Seed {
            id: e.id,
            stream: key,
            position: e.position,
        })
        .collect();
    let mut rc = RunConfig::event(cfg.t, key);
    rc.snapshot_times = vec![cfg.s, cfg.t];
    rc.record_genealogy = false;
    let mut sim = Simulation::from_population(rc, cfg.r, &seeds)?;
    sim.advance_until(cfg.t, &mut ())?;
    let out = sim.finish();
    let (ss, st) = (&out.snapshots[0], &out.snapshots[1]);
    let top_s = argmax_entry(&ss.entries).ok_or(BbmError::EmptyPopulation(cfg.s))?;
    let top_t = argmax_entry(&st.entries).ok_or(BbmError::EmptyPopulation(cfg.t))?;
    let a = top_s.position - m_t(cfg.s) >= cfg.x;
    let b = top_t.position - m_t(cfg.t) >= cfg.y;
    Ok((a, b, a && b && top_s.lineage != top_t.lineage))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

pub fn exp_decorrelation(cfg: &DecorrelationConfig, stream: RngStreamKey) -> Result<DecorrelationResult> {
    validate(cfg)?;
    let samples = par_trials(cfg.outer, stream, |_, key| {
        let mut rc = RunConfig::event(cfg.r, key.derive(0));
        rc.record_genealogy = false;
        let pop = run(rc, &mut ())?.snapshots.remove(0);
        assert!(!pop.is_empty(), "population at R cannot be empty");
        let inner_key = key.derive(1);
        let mut draws = Vec::with_capacity(cfg.inner as usize);
        for j in 0..cfg.inner {
            draws.push(inner_trial(cfg, &pop, inner_key.derive(j))?);
        }
        let n = cfg.inner;
        let count = |f: fn(&(bool, bool, bool)) -> bool| draws.iter().filter(|d| f(d)).count() as u64;
        let (p1, se1) = proportion(count(|d| d.0), n);
        let (p2, se2) = proportion(count(|d| d.1), n);
        let (p_l, se_l) = proportion(count(|d| d.2), n);
        let d: Vec<f64> = draws
            .iter()
            .map(|&(a, b, l)| f64::from(u8::from(l)) - p2 * f64::from(u8::from(a)) - p1 * f64::from(u8::from(b)))
            .collect();
        let se_diff = mean_sd(&d).1 / (n as f64).sqrt();
        let diff = p_l - p1 * p2;
        Ok(OuterSample {
            n_r: pop.len(),
            p1,
            p2,
            p_l,
            se1,
            se2,
            se_l,
            diff,
            se_diff,
            violated: diff > 3.0 * se_diff,
        })
    })?;
    Ok(DecorrelationResult { samples })
}

impl DecorrelationResult {
    pub fn violation_fraction(&self) -> f64 {
        self.samples.iter().filter(|s| s.violated).count() as f64 / self.samples.len() as f64
    }

    pub fn verdict(&self, cfg: &DecorrelationConfig) -> Verdict {
        let frac = self.violation_fraction();
        Verdict {
            pass: frac <= cfg.max_violation_fraction,
            detail: format!(
                "{} of {} outer samples with p_L - p1 p2 > 3 SE (fraction {frac:.4}, limit {})",
                self.samples.iter().filter(|s| s.violated).count(),
                self.samples.len(),
                cfg.max_violation_fraction
            ),
        }
    }

    pub fn report(&self, cfg: &DecorrelationConfig, seed: u64) -> ExperimentReport {
        let mut rep = ExperimentReport::new("decorrelate");
        rep.echo("seed", seed);
        rep.echo("R", cfg.r);
        rep.echo("s", cfg.s);
        rep.echo("t", cfg.t);
        rep.echo("x", cfg.x);
        rep.echo("y", cfg.y);
        rep.echo("outer", cfg.outer);
        rep.echo("inner", cfg.inner);
        let mut table = Table::new(
            "decorrelation",
            &[
                "outer", "n_R", "p1", "se1", "p2", "se2", "p_L", "se_L", "diff", "se_diff", "violated",
            ],
        );
        for (i, s) in self.samples.iter().enumerate() {
            table.push(vec![
                i.into(),
                s.n_r.into(),
                s.p1.into(),
                s.se1.into(),
                s.p2.into(),
                s.se2.into(),
                s.p_l.into(),
                s.se_l.into(),
                s.diff.into(),
                s.se_diff.into(),
                s.violated.into(),
            ]);
        }
        let (mean_diff, sd_diff) = mean_sd(&self.samples.iter().map(|s| s.diff).collect::<Vec<_>>());
        let mut summary = Table::new(
            "decorrelation_summary",
            &["outer", "violations", "fraction", "mean_diff", "sd_diff"],
        );
        summary.push(vec![
            self.samples.len().into(),
            self.samples.iter().filter(|s| s.violated).count().into(),
            self.violation_fraction().into(),
            mean_diff.into(),
            if self.samples.len() > 1 {
                sd_diff.into()
            } else {
                super::Cell::Empty
            },
        ]);
        rep.tables = vec![table, summary];
        rep.verdict = Some(self.verdict(cfg));
        rep
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_is_consistent() {
        let cfg = DecorrelationConfig {
            r: 1.0,
            s: 2.0,
            t: 3.0,
            outer: 4,
            inner: 50,
            ..DecorrelationConfig::default()
        };
        let r = exp_decorrelation(&cfg, RngStreamKey::root(5)).unwrap();
        assert_eq!(r.samples.len(), 4);
        for s in &r.samples {
            assert!(s.p_l <= s.p1.min(s.p2) + 1e-15);
            assert!(s.se_diff >= 0.0);
        }
        let again = exp_decorrelation(&cfg, RngStreamKey::root(5)).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn guards() {
        let k = RngStreamKey::root(0);
        assert!(exp_decorrelation(
            &DecorrelationConfig {
                s: 1.0,
                ..Default::default()
            },
            k
        )
        .is_err());
        assert!(exp_decorrelation(
            &DecorrelationConfig {
                r: 1.0,
                t: 12.0,
                s: 5.0,
                ..Default::default()
            },
            k
        )
        .is_err());
    }
}
