//! Probability that an extremal particle at time `s` and one at time `t`
//! share their path up to time `R`, as a function of `R`.

use super::report::{proportion, Cell, ExperimentReport, Table, Verdict};
use super::{fmt_list, nonincreasing_within, par_trials};
use crate::engine::{run, RunConfig};
use crate::error::{BbmError, Result};
use crate::observables::{extremal_pair_split_scan_with, extremal_set};
use crate::stochastic::RngStreamKey;

pub const MAX_T: f64 = 14.0;

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyConfig {
    pub s: f64,
    pub t: f64,
    pub x_s: f64,
    pub x_t: f64,
    pub r_list: Vec<f64>,
    pub trials: u64,
}

impl Default for EarlyConfig {
    fn default() -> Self {
        Self {
            s: 6.0,
            t: 12.0,
            x_s: -1.0,
            x_t: -1.0,
            r_list: vec![1.0, 2.0, 4.0],
            trials: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyTrial {
    /// Largest split time over the extremal pairs; `None` when a set is empty.
    pub q: Option<f64>,
    pub n_s: usize,
    pub n_t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyResult {
    pub trials: Vec<EarlyTrial>,
    /// `(R, hits, p, se)`
    pub rows: Vec<(f64, u64, f64, f64)>,
}

pub fn exp_early_branching(cfg: &EarlyConfig, stream: RngStreamKey) -> Result<EarlyResult> {
    if !(cfg.s > 0.0 && cfg.s < cfg.t && cfg.t <= MAX_T) {
        return Err(BbmError::Config(format!(
            "early-branching needs 0 < s < t <= 14, got s = {}, t = {}",
            cfg.s, cfg.t
        )));
    }
    if cfg.r_list.windows(2).any(|w| !(w[0] < w[1])) || cfg.r_list.is_empty() {
        return Err(BbmError::Config("R list must be non-empty and increasing".into()));
    }
    if cfg.trials < 2 {
        return Err(BbmError::Config("early-branching needs at least two trials".into()));
    }
    let trials = par_trials(cfg.trials, stream, |_, key| {
        let mut rc = RunConfig::event(cfg.t, key);
        rc.snapshot_times = vec![cfg.s, cfg.t];
        let out = run(rc, &mut ())?;
        let (ss, st) = (&out.snapshots[0], &out.snapshots[1]);
        Ok(EarlyTrial {
            q: extremal_pair_split_scan_with(&out.genealogy, ss, cfg.x_s, st, cfg.x_t)?,
            n_s: extremal_set(ss, cfg.x_s)?.len(),
            n_t: extremal_set(st, cfg.x_t)?.len(),
        })
    })?;
    let n = trials.len() as u64;
    let rows = cfg
        .r_list
        .iter()
        .map(|&r| {
            let hits = trials.iter().filter(|tr| tr.q.is_some_and(|q| q >= r)).count() as u64;
            let (p, se) = proportion(hits, n);
            (r, hits, p, se)
        })
        .collect();
    Ok(EarlyResult { trials, rows })
}

impl EarlyResult {
    pub fn verdict(&self) -> Verdict {
        let p: Vec<f64> = self.rows.iter().map(|r| r.2).collect();
        let se: Vec<f64> = self.rows.iter().map(|r| r.3).collect();
        let monotone = nonincreasing_within(&p, &se, 2.0);
        let (first, last) = (self.rows[0], *self.rows.last().unwrap());
        let combined = (first.3.powi(2) + last.3.powi(2)).sqrt();
        let gap = first.2 - last.2;
        Verdict {
            pass: monotone && gap > 2.0 * combined,
            detail: format!(
                "p(R={}) - p(R={}) = {:.5} vs 2 combined SE = {:.5}; nonincreasing within 2 SE: {monotone}",
                first.0,
                last.0,
                gap,
                2.0 * combined
            ),
        }
    }

    pub fn report(&self, cfg: &EarlyConfig, seed: u64) -> ExperimentReport {
        let mut rep = ExperimentReport::new("early-branching");
        rep.echo("seed", seed);
        rep.echo("s", cfg.s);
        rep.echo("t", cfg.t);
        rep.echo("x_s", cfg.x_s);
        rep.echo("x_t", cfg.x_t);
        rep.echo("R", fmt_list(&cfg.r_list));
        rep.echo("trials", cfg.trials);
        let both = self.trials.iter().filter(|t| t.q.is_some()).count() as u64;
        let mut table = Table::new("early_branching", &["R", "hits", "trials", "p_hat", "se"]);
        if !cfg.r_list.contains(&0.0) {
            let (p, se) = proportion(both, cfg.trials);
            table.push(vec![0.0.into(), both.into(), cfg.trials.into(), p.into(), se.into()]);
            rep.notes.push("R = 0 row: both extremal sets non-empty".into());
        }
        for &(r, hits, p, se) in &self.rows {
            table.push(vec![r.into(), hits.into(), cfg.trials.into(), p.into(), se.into()]);
        }
        let mut per = Table::new("early_branching_trials", &["trial", "max_split_time", "n_s", "n_t"]);
        for (i, tr) in self.trials.iter().enumerate() {
            per.push(vec![i.into(), Cell::from(tr.q), tr.n_s.into(), tr.n_t.into()]);
        }
        rep.tables = vec![table, per];
        rep.verdict = Some(self.verdict());
        rep
    }
}
