//! Probability that some extremal path leaves the envelope
//! `(s/t) m_t - min(s, t-s)^alpha` on `[r, t - r]`, for several `r`.

use super::report::{proportion, ExperimentReport, Table, Verdict};
use super::{fmt_list, nonincreasing_within, par_trials};
use crate::engine::{run, RunConfig};
use crate::error::{BbmError, Result};
use crate::observables::{extremal_entries, localization_check};
use crate::stochastic::{validate_alpha, RngStreamKey};

pub const MAX_T: f64 = 12.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationConfig {
    pub t: f64,
    pub x: f64,
    pub alpha: f64,
    pub r_list: Vec<f64>,
    pub trials: u64,
    pub dt: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            t: 10.0,
            x: -1.0,
            alpha: 0.4,
            r_list: vec![1.0, 2.0, 3.0],
            trials: 1000,
            dt: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationTrial {
    pub extremal: usize,
    /// One flag per checked `r`.
    pub violated: Vec<bool>,
    pub max_excess: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationResult {
    /// The `r` values that were checked (those with `t >= 3r`).
    pub checked: Vec<f64>,
    pub skipped: Vec<f64>,
    pub trials: Vec<LocalizationTrial>,
    /// `(r, hits, p, se)`
    pub rows: Vec<(f64, u64, f64, f64)>,
}

pub fn exp_localization(cfg: &LocalizationConfig, stream: RngStreamKey) -> Result<LocalizationResult> {
    validate_alpha(cfg.alpha)?;
    if !(cfg.t > 0.0 && cfg.t <= MAX_T) {
        return Err(BbmError::Domain {
            name: "t",
            value: cfg.t,
            reason: "localization runs unpruned in grid mode and needs 0 < t <= 12",
        });
    }
    if cfg.trials < 2 || cfg.r_list.is_empty() || cfg.r_list.iter().any(|&r| !(r >= 0.0)) {
        return Err(BbmError::Config(
            "localization needs trials >= 2 and non-negative r values".into(),
        ));
    }
    let (checked, skipped): (Vec<f64>, Vec<f64>) = cfg.r_list.iter().partition(|&&r| cfg.t >= 3.0 * r);
    if checked.is_empty() {
        return Err(BbmError::Config(format!(
            "no r in [{}] satisfies t >= 3r",
            fmt_list(&cfg.r_list)
        )));
    }
    let trials = par_trials(cfg.trials, stream, |_, key| {
        let mut rc = RunConfig::grid(cfg.t, cfg.dt, key);
        rc.snapshot_times = vec![cfg.t];
        let out = run(rc, &mut ())?;
        let snap = &out.snapshots[0];
        let mut violated = vec![false; checked.len()];
        let mut max_excess = vec![f64::NEG_INFINITY; checked.len()];
        let mut extremal = 0;
        for e in extremal_entries(snap, cfg.x)? {
            extremal += 1;
            let node = e
                .node
                .ok_or_else(|| BbmError::Config("grid run did not record genealogy".into()))?;
            let (first, values) = out.genealogy.grid_path(node)?;
            let times: Vec<f64> = (0..values.len())
                .map(|i| (first as usize + i) as f64 * cfg.dt)
                .collect();
            for (j, &r) in checked.iter().enumerate() {
                let s = localization_check(&times, &values, cfg.t, r, cfg.alpha)?;
                violated[j] |= s.violated;
                max_excess[j] = max_excess[j].max(s.max_excess);
            }
        }
        Ok(LocalizationTrial {
            extremal,
            violated,
            max_excess,
        })
    })?;
    let n = trials.len() as u64;
    let rows = checked
        .iter()
        .enumerate()
        .map(|(j, &r)| {
            let hits = trials.iter().filter(|tr| tr.violated[j]).count() as u64;
            let (p, se) = proportion(hits, n);
            (r, hits, p, se)
        })
        .collect();
    Ok(LocalizationResult {
        checked,
        skipped,
        trials,
        rows,
    })
}

impl LocalizationResult {
    pub fn verdict(&self) -> Verdict {
        let p: Vec<f64> = self.rows.iter().map(|r| r.2).collect();
        let se: Vec<f64> = self.rows.iter().map(|r| r.3).collect();
        let pass = nonincreasing_within(&p, &se, 2.0);
        Verdict {
            pass,
            detail: format!("p_hat = [{}], nonincreasing in r within 2 SE: {pass}", fmt_list(&p)),
        }
    }

    pub fn report(&self, cfg: &LocalizationConfig, seed: u64) -> ExperimentReport {
        let mut rep = ExperimentReport::new("localization");
        rep.echo("seed", seed);
        rep.echo("t", cfg.t);
        rep.echo("x", cfg.x);
        rep.echo("alpha", cfg.alpha);
        rep.echo("r", fmt_list(&cfg.r_list));
        rep.echo("trials", cfg.trials);
        rep.echo("dt", cfg.dt);
        let mut table = Table::new("localization", &["r", "hits", "trials", "p_hat", "se"]);
        for &(r, hits, p, se) in &self.rows {
            table.push(vec![r.into(), hits.into(), cfg.trials.into(), p.into(), se.into()]);
        }
        let mut cols = vec!["trial".to_string(), "extremal".to_string()];
        for r in &self.checked {
            cols.push(format!("violated_r{r}"));
            cols.push(format!("max_excess_r{r}"));
        }
        let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
        let mut per = Table::new("localization_trials", &col_refs);
        for (i, tr) in self.trials.iter().enumerate() {
            let mut row = vec![i.into(), tr.extremal.into()];
            for j in 0..self.checked.len() {
                row.push(tr.violated[j].into());
                row.push(if tr.extremal > 0 {
                    tr.max_excess[j].into()
                } else {
                    super::Cell::Empty
                });
            }
            per.push(row);
        }
        rep.tables = vec![table, per];
        for r in &self.skipped {
            rep.notes.push(format!("r = {r} skipped: needs t >= 3r"));
        }
        rep.verdict = Some(self.verdict());
        rep
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_nests_and_skips() {
        let cfg = LocalizationConfig {
            t: 3.0,
            r_list: vec![0.0, 0.5, 1.0, 2.0],
            trials: 60,
            alpha: 0.5,
            ..LocalizationConfig::default()
        };
        let r = exp_localization(&cfg, RngStreamKey::root(4)).unwrap();
        assert_eq!(r.checked, vec![0.0, 0.5, 1.0]);
        assert_eq!(r.skipped, vec![2.0]);
        // Shrinking the window can only remove violations.
        for tr in &r.trials {
            assert!(tr.violated.windows(2).all(|w| w[0] || !w[1]));
        }
        let rep = r.report(&cfg, 4);
        assert!(rep.notes[0].contains("r = 2"));
    }

    #[test]
    fn rejects_bad_alpha_and_window() {
        let k = RngStreamKey::root(0);
        assert!(exp_localization(
            &LocalizationConfig {
                alpha: 0.6,
                ..Default::default()
            },
            k
        )
        .is_err());
        assert!(exp_localization(
            &LocalizationConfig {
                r_list: vec![4.0],
                ..Default::default()
            },
            k
        )
        .is_err());
    }
}
