//! Time averages of bounded piecewise-constant signals along a schedule
//! `S_n`, with the bound `sup_{T in [S_n, S_{n+1}]} |rho_T| <= |rho_{S_n}| + 1 - S_n / S_{n+1}`.

use rand::Rng;

use super::report::{ExperimentReport, Table, Verdict};
use crate::error::{BbmError, Result};
use crate::stochastic::RngStreamKey;

pub const BOUND_SLACK: f64 = 1e-12;

/// `x(t) = values[k]` on `[times[k], times[k + 1])`, the last value extending to infinity.
/// `times[0]` must be 0.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSignal {
    times: Vec<f64>,
    values: Vec<f64>,
    /// `integral_0^{times[k]} x`
    cumulative: Vec<f64>,
}

impl StepSignal {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() || times[0] != 0.0 {
            return Err(BbmError::Config(
                "signal needs matching times and values starting at 0".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) || times.iter().any(|t| !t.is_finite()) {
            return Err(BbmError::Config("signal times must be finite and increasing".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(BbmError::Domain {
                name: "x",
                value: *v,
                reason: "signal must satisfy |x(t)| <= 1",
            });
        }
        let mut cumulative = Vec::with_capacity(times.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for k in 1..times.len() {
            acc += values[k - 1] * (times[k] - times[k - 1]);
            cumulative.push(acc);
        }
        Ok(Self {
            times,
            values,
            cumulative,
        })
    }

    pub fn integral(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t) - 1;
        self.cumulative[k] + self.values[k] * (t - self.times[k])
    }

    /// `rho_T = (1/T) integral_0^T x`.
    pub fn average(&self, t: f64) -> f64 {
        self.integral(t) / t
    }

    /// Exact `sup |rho_T|` over `[a, b]`: on each constant piece `rho_T` is
    /// monotone in `T`, so the extremes sit at breakpoints or at `a`, `b`.
    pub fn sup_abs_average(&self, a: f64, b: f64) -> f64 {
        let lo = self.times.partition_point(|&s| s <= a);
        let hi = self.times.partition_point(|&s| s < b);
        let mut best = self.average(a).abs().max(self.average(b).abs());
        for &t in &self.times[lo..hi] {
            best = best.max(self.average(t).abs());
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsequenceRow {
    pub n: usize,
    pub s_n: f64,
    pub s_next: f64,
    pub rho_s_n: f64,
    pub sup: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Per-interval suprema of `|rho_T|` and the bound check for every consecutive pair of the schedule.
pub fn subsequence_average_check(signal: &StepSignal, schedule: &[f64]) -> Result<Vec<SubsequenceRow>> {
    if schedule.len() < 2 {
        return Err(BbmError::Config("schedule needs at least two times".into()));
    }
    if schedule[0] <= 0.0 || schedule.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(BbmError::Config("schedule must be positive and increasing".into()));
    }
    Ok(schedule
        .windows(2)
        .enumerate()
        .map(|(n, w)| {
            let (a, b) = (w[0], w[1]);
            let rho = signal.average(a);
            let sup = signal.sup_abs_average(a, b);
            let bound = rho.abs() + (1.0 - a / b);
            SubsequenceRow {
                n,
                s_n: a,
                s_next: b,
                rho_s_n: rho,
                sup,
                bound,
                holds: sup <= bound + BOUND_SLACK,
            }
        })
        .collect())
}

/// `S_n = exp(n^beta)` for `n = 1, 2, ...` while `S_n <= t_max`.
pub fn exp_power_schedule(beta: f64, t_max: f64) -> Vec<f64> {
    (1..)
        .map(|n: i32| f64::from(n).powf(beta).exp())
        .take_while(|&s| s <= t_max)
        .collect()
}

/// Random signal with values in `[-1, 1]` on `n_pieces` random pieces over `[0, t_max]`.
pub fn random_signal(stream: RngStreamKey, n_pieces: usize, t_max: f64) -> StepSignal {
    let mut rng = stream.rng();
    let mut cuts: Vec<f64> = (1..n_pieces).map(|_| rng.random::<f64>() * t_max).collect();
    cuts.push(0.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let values = cuts
        .iter()
        .map(|_| match rng.random_range(0..4) {
            0 => 1.0,
            1 => -1.0,
            _ => rng.random_range(-1.0..=1.0),
        })
        .collect();
    StepSignal::new(cuts, values).expect("valid random signal")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsequenceCampaign {
    pub signals: u64,
    pub t_max: f64,
}

impl Default for SubsequenceCampaign {
    fn default() -> Self {
        Self {
            signals: 100,
            t_max: 5_000.0,
        }
    }
}

/// Randomized signals and schedules `exp(n^beta)`, `beta` in `[0.3, 0.95]`.
pub fn subsequence_campaign(cfg: &SubsequenceCampaign, stream: RngStreamKey) -> Result<ExperimentReport> {
    let mut table = Table::new(
        "subsequence",
        &[
            "signal",
            "beta",
            "n",
            "s_n",
            "s_next",
            "rho_s_n",
            "sup_abs_rho",
            "bound",
            "holds",
        ],
    );
    let mut failures = 0u64;
    for i in 0..cfg.signals {
        let key = stream.derive(i);
        let mut rng = key.derive(1).rng();
        let beta = rng.random_range(0.3..0.95);
        let pieces = rng.random_range(2..400);
        let signal = random_signal(key.derive(0), pieces, cfg.t_max);
        let schedule = exp_power_schedule(beta, cfg.t_max);
        for row in subsequence_average_check(&signal, &schedule)? {
            failures += u64::from(!row.holds);
            table.push(vec![
                i.into(),
                beta.into(),
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
    let mut rep = ExperimentReport::new("subsequence-check");
    rep.echo("signals", cfg.signals);
    rep.echo("t_max", cfg.t_max);
    rep.echo("slack", BOUND_SLACK);
    rep.tables.push(table);
    rep.verdict = Some(Verdict {
        pass: failures == 0,
        detail: format!("{failures} bound failures over {} signals", cfg.signals),
    });
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_and_one_signals() {
        let sched = exp_power_schedule(0.5, 1e4);
        let zero = StepSignal::new(vec![0.0], vec![0.0]).unwrap();
        assert!(subsequence_average_check(&zero, &sched)
            .unwrap()
            .iter()
            .all(|r| r.sup == 0.0 && r.holds));
        let one = StepSignal::new(vec![0.0], vec![1.0]).unwrap();
        for r in subsequence_average_check(&one, &sched).unwrap() {
            assert_abs_diff_eq!(r.sup, 1.0, epsilon = 1e-15);
            assert!(r.holds);
        }
    }

    #[test]
    fn sign_of_sine() {
        // x(t) = sign(sin t), switching at multiples of pi
        let n = 4000;
        let times: Vec<f64> = (0..n).map(|k| k as f64 * std::f64::consts::PI).collect();
        let values: Vec<f64> = (0..n).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let sig = StepSignal::new(times, values).unwrap();
        let rows = subsequence_average_check(&sig, &exp_power_schedule(0.5, 12_000.0)).unwrap();
        assert!(rows.len() > 50);
        assert!(rows.iter().all(|r| r.holds));
    }

    #[test]
    fn sup_matches_dense_scan() {
        let sig = random_signal(RngStreamKey::root(3), 30, 50.0);
        let (a, b) = (7.5, 31.0);
        let dense = (0..=200_000)
            .map(|i| sig.average(a + (b - a) * i as f64 / 200_000.0).abs())
            .fold(0.0, f64::max);
        let exact = sig.sup_abs_average(a, b);
        assert!(exact >= dense - 1e-12);
        assert!(exact - dense < 1e-3);
    }

    #[test]
    fn rejects_unbounded() {
        assert!(StepSignal::new(vec![0.0, 1.0], vec![0.5, 1.5]).is_err());
        assert!(StepSignal::new(vec![1.0], vec![0.5]).is_err());
    }

    #[test]
    fn campaign() {
        let rep = subsequence_campaign(&SubsequenceCampaign::default(), RngStreamKey::root(1)).unwrap();
        assert!(rep.verdict.unwrap().pass);
    }
}
