//! Long pruned runs: the time average `F_T(x)` of `1{M_t - m_t <= x}` over
//! `[eps T, T]`, its fit against `exp(-c e^{-sqrt2 x})`, the dependence of the
//! fitted constant on the derivative martingale, and sensitivity to the
//! pruning gap.

use std::f64::consts::SQRT_2;

use super::report::{correlation_ci, ols_through_origin, pearson, Cell, ExperimentReport, LineFit, Table, Verdict};
use super::subsequence::{exp_power_schedule, subsequence_average_check, StepSignal, SubsequenceRow};
use super::{fmt_list, par_trials};
use crate::engine::{run, PopulationSnapshot, PruneConfig, PruneMode, RunConfig, RunStats};
use crate::error::{BbmError, Result};
use crate::genealogy::Genealogy;
use crate::observables::{derivative_martingale, max_offset, ErgodicAccumulator};
use crate::stochastic::RngStreamKey;

#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicConfig {
    pub horizon: f64,
    pub eps: f64,
    pub gap: f64,
    pub dt_sample: f64,
    pub x_grid: Vec<f64>,
    pub seeds: u64,
    /// Pruning starts after `t0`, where the derivative martingale is read.
    pub t0: f64,
    pub fit_lo: f64,
    pub fit_hi: f64,
    pub beta: f64,
    /// Level of the indicator used for the subsequence check.
    pub x_sub: f64,
    /// Rerun every seed with gap `2 L`.
    pub sensitivity: bool,
    pub particle_limit: usize,
    pub min_r2: f64,
    pub min_correlation: f64,
    pub max_shift_sds: f64,
}

impl Default for ErgodicConfig {
    fn default() -> Self {
        Self {
            horizon: 50.0,
            eps: 0.1,
            gap: 8.0,
            dt_sample: 0.1,
            x_grid: crate::observables::default_x_grid(),
            seeds: 8,
            t0: 5.0,
            fit_lo: -1.0,
            fit_hi: 1.0,
            beta: 0.9,
            x_sub: 0.0,
            sensitivity: true,
            particle_limit: 4_000_000,
            min_r2: 0.9,
            min_correlation: 0.3,
            max_shift_sds: 3.0,
        }
    }
}

impl ErgodicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps < 1.0) {
            return Err(BbmError::Domain {
                name: "eps",
                value: self.eps,
                reason: "integration window [eps T, T] must be non-empty (0 <= eps < 1)",
            });
        }
        if !(self.horizon > 0.0 && self.dt_sample > 0.0 && self.dt_sample < self.horizon) {
            return Err(BbmError::Config("ergodic needs T > dt_sample > 0".into()));
        }
        if !(self.t0 > 0.0 && self.t0 < self.horizon) {
            return Err(BbmError::Domain {
                name: "t0",
                value: self.t0,
                reason: "must lie in (0, T)",
            });
        }
        if !(self.gap > 0.0) {
            return Err(BbmError::Domain {
                name: "L",
                value: self.gap,
                reason: "pruning gap must be positive",
            });
        }
        if self.seeds < 1 {
            return Err(BbmError::Config("ergodic needs at least one seed".into()));
        }
        if !(self.fit_lo < self.fit_hi) {
            return Err(BbmError::Config("fit window must satisfy fit_lo < fit_hi".into()));
        }
        ErgodicAccumulator::new(self.x_grid.clone(), 0.0).map(|_| ())
    }

    fn run_config(&self, gap: f64, key: RngStreamKey) -> RunConfig {
        let mut rc = RunConfig::event(self.horizon, key);
        rc.snapshot_times = vec![self.t0, self.horizon];
        rc.sync_interval = Some(self.dt_sample);
        rc.prune = PruneConfig {
            mode: PruneMode::GapToMax { gap },
            active_after: self.t0,
        };
        rc.hard_particle_limit = self.particle_limit;
        rc.record_genealogy = false;
        rc
    }
}

/// Centered front `M_t - m_t` at every synchronization time of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontSeries {
    pub times: Vec<f64>,
    pub offsets: Vec<f64>,
    pub z0: f64,
    pub stats: RunStats,
}

fn run_front(cfg: &ErgodicConfig, gap: f64, key: RngStreamKey) -> Result<FrontSeries> {
    let mut times = Vec::new();
    let mut offsets = Vec::new();
    let mut obs = |snap: &PopulationSnapshot, _: &Genealogy| -> Result<()> {
        if snap.time > 0.0 {
            times.push(snap.time);
            offsets.push(max_offset(snap)?.offset);
        }
        Ok(())
    };
    let out = run(cfg.run_config(gap, key), &mut obs)?;
    Ok(FrontSeries {
        times,
        offsets,
        z0: derivative_martingale(&out.snapshots[0])?,
        stats: out.stats,
    })
}

impl FrontSeries {
    /// Left Riemann sums over `[eps T, T]` using every `stride`-th sample of the window.
    pub fn accumulate(&self, cfg: &ErgodicConfig, stride: usize) -> Result<ErgodicAccumulator> {
        let start = cfg.eps * cfg.horizon;
        let tol = 1e-9 * cfg.dt_sample;
        let mut acc = ErgodicAccumulator::new(cfg.x_grid.clone(), start)?;
        let window: Vec<usize> = (0..self.times.len())
            .filter(|&k| self.times[k] + tol >= start && self.times[k] + tol < cfg.horizon)
            .step_by(stride.max(1))
            .collect();
        for (j, &k) in window.iter().enumerate() {
            let next = window.get(j + 1).map_or(cfg.horizon, |&k2| self.times[k2]);
            acc.accumulate(self.offsets[k], next - self.times[k])?;
        }
        Ok(acc)
    }

    /// `x(t) = 1{M_t - m_t >= level} - center`, constant between samples.
    pub fn indicator_signal(&self, level: f64, center: f64) -> Result<StepSignal> {
        let mut times = vec![0.0];
        let mut values = Vec::with_capacity(self.times.len());
        let ind = |o: f64| f64::from(u8::from(o >= level)) - center;
        values.push(ind(self.offsets[0]));
        for (&t, &o) in self.times.iter().zip(&self.offsets).skip(1) {
            times.push(t);
            values.push(ind(o));
        }
        StepSignal::new(times, values)
    }
}

/// Fit of `-log F` against `e^{-sqrt2 x}` through the origin on the window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FormFit {
    pub fit: Option<LineFit>,
    /// Window cells dropped because `F = 0`.
    pub excluded: usize,
}

pub fn form_fit(x_grid: &[f64], f: &[f64], lo: f64, hi: f64) -> FormFit {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = 0;
    for (&x, &fx) in x_grid.iter().zip(f) {
        if x < lo - 1e-12 || x > hi + 1e-12 {
            continue;
        }
        if fx <= 0.0 {
            excluded += 1;
            continue;
        }
        xs.push((-SQRT_2 * x).exp());
        ys.push(-fx.ln());
    }
    FormFit {
        fit: ols_through_origin(&xs, &ys),
        excluded,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub series: FrontSeries,
    pub f_le: Vec<f64>,
    pub g_ge: Vec<f64>,
    /// `F` from every second sample, for the Riemann-step check.
    pub f_le_coarse: Vec<f64>,
    pub form: FormFit,
    pub subsequence: Vec<SubsequenceRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SensitivityRun {
    Completed {
        f_le: Vec<f64>,
        stats: RunStats,
    },
    Aborted {
        time: f64,
        alive: usize,
        limit: usize,
    },
    /// Not attempted after an earlier seed hit the resource guard.
    Skipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicResult {
    pub seeds: Vec<SeedResult>,
    pub sensitivity: Vec<SensitivityRun>,
    pub correlation: Option<f64>,
}

fn seed_result(cfg: &ErgodicConfig, series: FrontSeries) -> Result<SeedResult> {
    let acc = series.accumulate(cfg, 1)?;
    let f_le = acc.result()?;
    let g_ge = acc.result_ge()?;
    let f_le_coarse = series.accumulate(cfg, 2)?.result()?;
    let form = form_fit(&cfg.x_grid, &f_le, cfg.fit_lo, cfg.fit_hi);
    let schedule = exp_power_schedule(cfg.beta, cfg.horizon);
    let subsequence = if schedule.len() >= 2 {
        let level_frac =
            series.offsets.iter().filter(|&&o| o >= cfg.x_sub).count() as f64 / series.offsets.len() as f64;
        subsequence_average_check(&series.indicator_signal(cfg.x_sub, level_frac)?, &schedule)?
    } else {
        Vec::new()
    };
    Ok(SeedResult {
        series,
        f_le,
        g_ge,
        f_le_coarse,
        form,
        subsequence,
    })
}

pub fn exp_ergodic(cfg: &ErgodicConfig, stream: RngStreamKey) -> Result<ErgodicResult> {
    cfg.validate()?;
    let seeds = par_trials(cfg.seeds, stream, |_, key| {
        seed_result(cfg, run_front(cfg, cfg.gap, key)?)
    })?;
    let mut sensitivity = Vec::new();
    if cfg.sensitivity {
        // Sequential and in seed order: the doubled gap can exhaust memory.
        let mut aborted = false;
        for i in 0..cfg.seeds {
            if aborted {
                sensitivity.push(SensitivityRun::Skipped);
                continue;
            }
            match run_front(cfg, 2.0 * cfg.gap, stream.derive(i)) {
                Ok(series) => {
                    let f_le = series.accumulate(cfg, 1)?.result()?;
                    sensitivity.push(SensitivityRun::Completed {
                        f_le,
                        stats: series.stats,
                    });
                }
                Err(BbmError::ParticleLimit { limit, time, alive }) => {
                    aborted = true;
                    sensitivity.push(SensitivityRun::Aborted { time, alive, limit });
                }
                Err(e) => return Err(e),
            }
        }
    }
    let slopes: Vec<f64> = seeds.iter().filter_map(|s| s.form.fit.map(|f| f.slope)).collect();
    let zs: Vec<f64> = seeds
        .iter()
        .filter(|s| s.form.fit.is_some())
        .map(|s| s.series.z0)
        .collect();
    Ok(ErgodicResult {
        correlation: pearson(&slopes, &zs),
        seeds,
        sensitivity,
    })
}

fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// The three parts of the acceptance check, reported separately.
#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicVerdicts {
    pub form: Verdict,
    pub correlation: Verdict,
    pub sensitivity: Verdict,
}

impl ErgodicResult {
    /// Cross-seed SD of `F_T(x)` per grid cell.
    pub fn cell_sds(&self) -> Vec<f64> {
        let n = self.seeds.first().map_or(0, |s| s.f_le.len());
        (0..n)
            .map(|j| sd(&self.seeds.iter().map(|s| s.f_le[j]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn verdicts(&self, cfg: &ErgodicConfig) -> ErgodicVerdicts {
        let r2: Vec<f64> = self
            .seeds
            .iter()
            .map(|s| s.form.fit.map_or(f64::NAN, |f| f.r2))
            .collect();
        let form_pass = r2.iter().all(|&r| r >= cfg.min_r2);
        let form = Verdict {
            pass: form_pass,
            detail: format!("per-seed R2 = [{}] (need >= {})", fmt_r(&r2), cfg.min_r2),
        };
        let correlation = match self.correlation {
            Some(r) => Verdict {
                pass: r > cfg.min_correlation,
                detail: format!("slope-Z correlation {r:.4} (need > {})", cfg.min_correlation),
            },
            None => Verdict {
                pass: false,
                detail: "slope-Z correlation undefined".into(),
            },
        };
        let sds = self.cell_sds();
        let sensitivity = if self.sensitivity.is_empty() {
            Verdict {
                pass: false,
                detail: "sensitivity run not requested".into(),
            }
        } else if let Some(SensitivityRun::Aborted { time, alive, limit }) = self
            .sensitivity
            .iter()
            .find(|r| matches!(r, SensitivityRun::Aborted { .. }))
        {
            Verdict {
                pass: false,
                detail: format!(
                    "gap {} run aborted at t = {time:.2} with {alive} particles (limit {limit})",
                    2.0 * cfg.gap
                ),
            }
        } else {
            let mut worst: f64 = 0.0;
            for (s, run) in self.seeds.iter().zip(&self.sensitivity) {
                if let SensitivityRun::Completed { f_le, .. } = run {
                    for ((a, b), sd) in s.f_le.iter().zip(f_le).zip(&sds) {
                        let ratio = if *sd > 0.0 {
                            (a - b).abs() / sd
                        } else if a == b {
                            0.0
                        } else {
                            f64::INFINITY
                        };
                        worst = worst.max(ratio);
                    }
                }
            }
            Verdict {
                pass: worst < cfg.max_shift_sds,
                detail: format!(
                    "largest cell shift {worst:.3} cross-seed SDs (need < {})",
                    cfg.max_shift_sds
                ),
            }
        };
        ErgodicVerdicts {
            form,
            correlation,
            sensitivity,
        }
    }

    pub fn report(&self, cfg: &ErgodicConfig, seed: u64) -> ExperimentReport {
        let mut rep = ExperimentReport::new("ergodic");
        rep.echo("seed", seed);
        rep.echo("T", cfg.horizon);
        rep.echo("eps", cfg.eps);
        rep.echo("L", cfg.gap);
        rep.echo("dt_sample", cfg.dt_sample);
        rep.echo("seeds", cfg.seeds);
        rep.echo("t0", cfg.t0);
        rep.echo("fit_window", format!("{} {}", cfg.fit_lo, cfg.fit_hi));
        rep.echo("beta", cfg.beta);
        rep.echo("x_sub", cfg.x_sub);
        rep.echo("x_grid", fmt_list(&cfg.x_grid));
        rep.echo("particle_limit", cfg.particle_limit);

        let mut curves = Table::new("ergodic_curves", &["seed", "L", "x", "F_le", "G_ge", "F_le_2dt"]);
        for (i, s) in self.seeds.iter().enumerate() {
            for (j, &x) in cfg.x_grid.iter().enumerate() {
                curves.push(vec![
                    i.into(),
                    cfg.gap.into(),
                    x.into(),
                    s.f_le[j].into(),
                    s.g_ge[j].into(),
                    s.f_le_coarse[j].into(),
                ]);
            }
        }
        for (i, r) in self.sensitivity.iter().enumerate() {
            if let SensitivityRun::Completed { f_le, .. } = r {
                for (j, &x) in cfg.x_grid.iter().enumerate() {
                    curves.push(vec![
                        i.into(),
                        (2.0 * cfg.gap).into(),
                        x.into(),
                        f_le[j].into(),
                        Cell::Empty,
                        Cell::Empty,
                    ]);
                }
            }
        }

        let mut fits = Table::new(
            "ergodic_fits",
            &[
                "seed",
                "Z_t0",
                "slope",
                "slope_se",
                "r2",
                "points",
                "excluded",
                "riemann_gap",
                "max_alive",
                "final_alive",
                "killed",
            ],
        );
        for (i, s) in self.seeds.iter().enumerate() {
            let f = s.form.fit;
            let gap = s
                .f_le
                .iter()
                .zip(&s.f_le_coarse)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            fits.push(vec![
                i.into(),
                s.series.z0.into(),
                f.map(|f| f.slope).into(),
                f.map(|f| f.slope_se).into(),
                f.map(|f| f.r2).into(),
                f.map(|f| f.n).into(),
                s.form.excluded.into(),
                gap.into(),
                s.series.stats.max_alive.into(),
                s.series.stats.final_alive.into(),
                s.series.stats.killed.into(),
            ]);
        }

        let mut summary = Table::new(
            "ergodic_summary",
            &["seeds", "correlation", "ci_lo", "ci_hi", "mean_r2", "min_r2"],
        );
        let r2: Vec<f64> = self.seeds.iter().filter_map(|s| s.form.fit.map(|f| f.r2)).collect();
        let (lo, hi) = match self.correlation {
            Some(r) if r2.len() > 3 => {
                let (lo, hi) = correlation_ci(r, r2.len(), 1.96);
                (Cell::from(lo), Cell::from(hi))
            }
            _ => (Cell::Empty, Cell::Empty),
        };
        summary.push(vec![
            self.seeds.len().into(),
            self.correlation.into(),
            lo,
            hi,
            if r2.is_empty() {
                Cell::Empty
            } else {
                (r2.iter().sum::<f64>() / r2.len() as f64).into()
            },
            r2.iter().copied().reduce(f64::min).into(),
        ]);

        let mut sens = Table::new(
            "ergodic_sensitivity",
            &[
                "seed",
                "x",
                "F_L",
                "F_2L",
                "shift",
                "cross_seed_sd",
                "shift_in_sds",
                "status",
            ],
        );
        let sds = self.cell_sds();
        for (i, (s, r)) in self.seeds.iter().zip(&self.sensitivity).enumerate() {
            match r {
                SensitivityRun::Completed { f_le, .. } => {
                    for (j, &x) in cfg.x_grid.iter().enumerate() {
                        let shift = f_le[j] - s.f_le[j];
                        sens.push(vec![
                            i.into(),
                            x.into(),
                            s.f_le[j].into(),
                            f_le[j].into(),
                            shift.into(),
                            sds[j].into(),
                            (shift.abs() / sds[j]).into(),
                            "completed".into(),
                        ]);
                    }
                }
                SensitivityRun::Aborted { time, alive, .. } => sens.push(vec![
                    i.into(),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    format!("aborted at t={time:.3} with {alive} alive").into(),
                ]),
                SensitivityRun::Skipped => sens.push(vec![
                    i.into(),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    "skipped".into(),
                ]),
            }
        }

        let mut sub = Table::new(
            "ergodic_subsequence",
            &["seed", "n", "T_n", "T_next", "rho_T_n", "sup_abs_rho", "bound", "holds"],
        );
        for (i, s) in self.seeds.iter().enumerate() {
            for row in &s.subsequence {
                sub.push(vec![
                    i.into(),
                    row.n.into(),
                    row.s_n.into(),
                    row.s_next.into(),
                    row.rho_s_n.into(),
                    row.sup.into(),
                    row.bound.into(),
                    row.holds.into(),
                ]);
            }
        }

        rep.tables = vec![curves, fits, summary, sens, sub];
        let excluded: usize = self.seeds.iter().map(|s| s.form.excluded).sum();
        if excluded > 0 {
            rep.notes
                .push(format!("{excluded} cells with F = 0 excluded from the log fits"));
        }
        if exp_power_schedule(cfg.beta, cfg.horizon).len() < 2 {
            rep.notes
                .push("schedule exp(n^beta) has fewer than two points below T".into());
        }
        let v = self.verdicts(cfg);
        rep.notes.push(format!("form: {}", v.form.detail));
        rep.notes.push(format!("correlation: {}", v.correlation.detail));
        rep.notes.push(format!("sensitivity: {}", v.sensitivity.detail));
        rep.verdict = Some(Verdict {
            pass: v.form.pass && v.correlation.pass && v.sensitivity.pass,
            detail: format!(
                "form {}, correlation {}, sensitivity {}",
                pf(v.form.pass),
                pf(v.correlation.pass),
                pf(v.sensitivity.pass)
            ),
        });
        rep
    }
}

fn pf(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}

fn fmt_r(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}
