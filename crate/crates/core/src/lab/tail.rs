//! Right tail of the centered maximum, `P(M_t - m_t >= y)`, and the slope of
//! its logarithm.

use std::f64::consts::SQRT_2;

use super::report::{ols, proportion, Cell, ExperimentReport, LineFit, Table, Verdict};
use super::{fmt_list, par_trials};
use crate::engine::{run, RunConfig};
use crate::error::{BbmError, Result};
use crate::observables::max_offset;
use crate::stochastic::RngStreamKey;

pub const MAX_T: f64 = 12.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TailConfig {
    pub t: f64,
    pub trials: u64,
    pub y_grid: Vec<f64>,
    pub fit_lo: f64,
    pub fit_hi: f64,
    /// Cells need at least this many exceedances to enter the fit.
    pub min_hits: u64,
    pub target_slope: f64,
    pub slope_tolerance: f64,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            t: 10.0,
            trials: 20_000,
            y_grid: (0..=20).map(|i| -1.0 + 0.25 * i as f64).collect(),
            fit_lo: 1.0,
            fit_hi: 3.5,
            min_hits: 100,
            target_slope: -SQRT_2,
            slope_tolerance: 0.35,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailResult {
    pub offsets: Vec<f64>,
    /// `(y, hits, p, se)`
    pub cells: Vec<(f64, u64, f64, f64)>,
    pub fit: Option<LineFit>,
    pub fit_points: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn exp_right_tail(cfg: &TailConfig, stream: RngStreamKey) -> Result<TailResult> {
    if !(cfg.t > 0.0 && cfg.t <= MAX_T) {
        return Err(BbmError::Domain {
            name: "t",
            value: cfg.t,
            reason: "tail experiment runs unpruned and needs 0 < t <= 12",
        });
    }
    if cfg.trials < 2 || cfg.y_grid.is_empty() {
        return Err(BbmError::Config("tail needs trials >= 2 and a non-empty y grid".into()));
    }
    let offsets = par_trials(cfg.trials, stream, |_, key| {
        let mut rc = RunConfig::event(cfg.t, key);
        rc.record_genealogy = false;
        let out = run(rc, &mut ())?;
        Ok(max_offset(&out.snapshots[0])?.offset)
    })?;
    let mut sorted = offsets.clone();
    sorted.sort_by(f64::total_cmp);
    let n = offsets.len() as u64;
    let cells: Vec<(f64, u64, f64, f64)> = cfg
        .y_grid
        .iter()
        .map(|&y| {
            let hits = (sorted.len() - sorted.partition_point(|&o| o < y)) as u64;
            let (p, se) = proportion(hits, n);
            (y, hits, p, se)
        })
        .collect();
    let in_range: Vec<_> = cells
        .iter()
        .filter(|c| c.0 >= cfg.fit_lo - 1e-12 && c.0 <= cfg.fit_hi + 1e-12)
        .collect();
    let used: Vec<_> = in_range.iter().filter(|c| c.1 >= cfg.min_hits).collect();
    let mut warnings = Vec::new();
    if used.len() < in_range.len() {
        let dropped: Vec<f64> = in_range.iter().filter(|c| c.1 < cfg.min_hits).map(|c| c.0).collect();
        warnings.push(format!(
            "fit window shrank: y = {} have fewer than {} exceedances",
            fmt_list(&dropped),
            cfg.min_hits
        ));
    }
    let xs: Vec<f64> = used.iter().map(|c| c.0).collect();
    let ys: Vec<f64> = used.iter().map(|c| c.2.ln()).collect();
    let fit = ols(&xs, &ys);
    if fit.is_none() {
        warnings.push("fewer than two cells qualify for the slope fit".into());
    }
    Ok(TailResult {
        offsets,
        cells,
        fit,
        fit_points: xs,
        warnings,
    })
}

impl TailResult {
    pub fn verdict(&self, cfg: &TailConfig) -> Verdict {
        match self.fit {
            Some(f) => Verdict {
                pass: (f.slope - cfg.target_slope).abs() <= cfg.slope_tolerance,
                detail: format!(
                    "slope {:.4} +- {:.4} (target {:.5} +- {})",
                    f.slope,
                    1.96 * f.slope_se,
                    cfg.target_slope,
                    cfg.slope_tolerance
                ),
            },
            None => Verdict {
                pass: false,
                detail: "no slope fit".into(),
            },
        }
    }

    pub fn report(&self, cfg: &TailConfig, seed: u64) -> ExperimentReport {
        let mut rep = ExperimentReport::new("tail");
        rep.echo("seed", seed);
        rep.echo("t", cfg.t);
        rep.echo("trials", cfg.trials);
        rep.echo("y_grid", fmt_list(&cfg.y_grid));
        rep.echo("fit_lo", cfg.fit_lo);
        rep.echo("fit_hi", cfg.fit_hi);
        rep.echo("min_hits", cfg.min_hits);
        let mut cells = Table::new("tail", &["y", "hits", "trials", "p_hat", "se", "log_p_hat", "in_fit"]);
        for &(y, hits, p, se) in &self.cells {
            cells.push(vec![
                y.into(),
                hits.into(),
                cfg.trials.into(),
                p.into(),
                se.into(),
                if hits > 0 { Cell::Float(p.ln()) } else { Cell::Empty },
                self.fit_points.contains(&y).into(),
            ]);
        }
        let mut fit = Table::new(
            "tail_fit",
            &["slope", "slope_se", "ci_lo", "ci_hi", "intercept", "r2", "points"],
        );
        if let Some(f) = self.fit {
            fit.push(vec![
                f.slope.into(),
                f.slope_se.into(),
                (f.slope - 1.96 * f.slope_se).into(),
                (f.slope + 1.96 * f.slope_se).into(),
                f.intercept.into(),
                f.r2.into(),
                f.n.into(),
            ]);
        }
        let mut trials = Table::new("tail_trials", &["trial", "offset"]);
        for (i, &o) in self.offsets.iter().enumerate() {
            trials.push(vec![i.into(), o.into()]);
        }
        rep.tables = vec![cells, fit, trials];
        rep.notes = self.warnings.clone();
        rep.verdict = Some(self.verdict(cfg));
        rep
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_is_monotone_and_saturates_left() {
        let cfg = TailConfig {
            t: 4.0,
            trials: 2000,
            y_grid: vec![-10.0, -1.0, 0.0, 0.5, 1.0, 2.0],
            fit_lo: 0.0,
            fit_hi: 2.0,
            ..TailConfig::default()
        };
        let r = exp_right_tail(&cfg, RngStreamKey::root(1)).unwrap();
        assert_eq!(r.cells[0].2, 1.0);
        assert!(r.cells.windows(2).all(|w| w[1].2 <= w[0].2));
        assert!(r.fit.is_some());
        let rep = r.report(&cfg, 1);
        assert_eq!(rep.table("tail_trials").unwrap().rows.len(), 2000);
    }

    #[test]
    fn window_shrink_is_reported() {
        let cfg = TailConfig {
            t: 2.0,
            trials: 300,
            y_grid: vec![0.0, 0.5, 1.0, 3.0, 5.0],
            fit_lo: 0.0,
            fit_hi: 5.0,
            ..TailConfig::default()
        };
        let r = exp_right_tail(&cfg, RngStreamKey::root(2)).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("shrank")));
        assert!(exp_right_tail(&TailConfig { t: 13.0, ..cfg }, RngStreamKey::root(2)).is_err());
    }
}
