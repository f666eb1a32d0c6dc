//! Statistics of a run: centered maximum, extremal sets, the derivative
//! martingale, the ergodic average of the front, path localization and
//! split-time scans over extremal pairs.

use std::f64::consts::SQRT_2;

use crate::engine::{PopulationSnapshot, SnapshotEntry};
use crate::error::{ensure_finite, BbmError, Result};
use crate::genealogy::{Genealogy, ParticleId};
use crate::stochastic::{envelope_unchecked, m_t, validate_alpha};

/// Default x-grid of the ergodic average: 41 points on [-3, 2].
pub fn default_x_grid() -> Vec<f64> {
    (0..41).map(|i| -3.0 + 0.125 * i as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaxOffset {
    /// `M_t - m_t`.
    pub offset: f64,
    pub position: f64,
    pub argmax: ParticleId,
}

fn require_positive_time(snapshot: &PopulationSnapshot) -> Result<()> {
    if snapshot.time > 0.0 {
        Ok(())
    } else {
        Err(BbmError::Domain {
            name: "time",
            value: snapshot.time,
            reason: "centered statistics need t > 0",
        })
    }
}

/// Centered maximum of a snapshot; ties go to the smallest id.
pub fn max_offset(snapshot: &PopulationSnapshot) -> Result<MaxOffset> {
    require_positive_time(snapshot)?;
    let best = argmax_entry(&snapshot.entries).ok_or(BbmError::EmptyPopulation(snapshot.time))?;
    Ok(MaxOffset {
        offset: best.position - m_t(snapshot.time),
        position: best.position,
        argmax: best.id,
    })
}

pub(crate) fn argmax_entry(entries: &[SnapshotEntry]) -> Option<&SnapshotEntry> {
    entries.iter().reduce(|best, e| {
        if e.position > best.position || (e.position == best.position && e.id < best.id) {
            e
        } else {
            best
        }
    })
}

/// Ids whose centered position is at least `x`, in snapshot order.
pub fn extremal_set(snapshot: &PopulationSnapshot, x: f64) -> Result<Vec<ParticleId>> {
    Ok(extremal_entries(snapshot, x)?.map(|e| e.id).collect())
}

pub(crate) fn extremal_entries(
    snapshot: &PopulationSnapshot,
    x: f64,
) -> Result<impl Iterator<Item = &SnapshotEntry> + '_> {
    require_positive_time(snapshot)?;
    let level = m_t(snapshot.time) + x;
    Ok(snapshot.entries.iter().filter(move |e| e.position >= level))
}

/// `Z(t) = sum (sqrt2 t - X_u) exp(sqrt2 (X_u - sqrt2 t))`, summed in id
/// order with compensation so the value does not depend on entry order.
pub fn derivative_martingale(snapshot: &PopulationSnapshot) -> Result<f64> {
    if !(snapshot.time >= 0.0) {
        return Err(BbmError::Domain {
            name: "time",
            value: snapshot.time,
            reason: "must be non-negative",
        });
    }
    let mut entries: Vec<(ParticleId, f64)> = snapshot.entries.iter().map(|e| (e.id, e.position)).collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let lead = SQRT_2 * snapshot.time;
    Ok(neumaier_sum(entries.iter().map(|&(_, x)| {
        let gap = lead - x;
        gap * (-SQRT_2 * gap).exp()
    })))
}

pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Running time integral of `1{M_t - m_t <= x}` (and of the `>= x`
/// orientation) over an x-grid, realized as a left-endpoint Riemann sum.
#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicAccumulator {
    x_grid: Vec<f64>,
    mass_le: Vec<f64>,
    mass_ge: Vec<f64>,
    elapsed: f64,
    t_start: f64,
}

impl ErgodicAccumulator {
    pub fn new(x_grid: Vec<f64>, t_start: f64) -> Result<Self> {
        if x_grid.is_empty() {
            return Err(BbmError::Config("x-grid is empty".into()));
        }
        if x_grid.windows(2).any(|w| !(w[0] < w[1])) || x_grid.iter().any(|x| !x.is_finite()) {
            return Err(BbmError::Config("x-grid must be finite and strictly increasing".into()));
        }
        ensure_finite("t_start", t_start)?;
        let n = x_grid.len();
        Ok(Self {
            x_grid,
            mass_le: vec![0.0; n],
            mass_ge: vec![0.0; n],
            elapsed: 0.0,
            t_start,
        })
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass_le
    }

    pub fn mass_ge(&self) -> &[f64] {
        &self.mass_ge
    }

    /// Adds `dt_weight` of time spent at centered front `offset`.
    pub fn accumulate(&mut self, offset: f64, dt_weight: f64) -> Result<()> {
        ensure_finite("offset", offset)?;
        if !(dt_weight > 0.0) || !dt_weight.is_finite() {
            return Err(BbmError::Domain {
                name: "dt_weight",
                value: dt_weight,
                reason: "must be positive",
            });
        }
        for ((x, le), ge) in self.x_grid.iter().zip(&mut self.mass_le).zip(&mut self.mass_ge) {
            if offset <= *x {
                *le += dt_weight;
            }
            if offset >= *x {
                *ge += dt_weight;
            }
        }
        self.elapsed += dt_weight;
        Ok(())
    }

    /// `F(x) = mass(x) / elapsed` on the grid.
    pub fn result(&self) -> Result<Vec<f64>> {
        self.normalized(&self.mass_le)
    }

    /// Fraction of time with `M_t - m_t >= x`.
    pub fn result_ge(&self) -> Result<Vec<f64>> {
        self.normalized(&self.mass_ge)
    }

    fn normalized(&self, mass: &[f64]) -> Result<Vec<f64>> {
        if self.elapsed <= 0.0 {
            return Err(BbmError::Config(
                "ergodic average queried before any time was accumulated".into(),
            ));
        }
        Ok(mass.iter().map(|m| (m / self.elapsed).clamp(0.0, 1.0)).collect())
    }

    /// Adds the masses of `other`, which must share the grid and start time.
    pub fn merge(&mut self, other: &ErgodicAccumulator) -> Result<()> {
        if self.x_grid != other.x_grid || self.t_start != other.t_start {
            return Err(BbmError::Config(
                "cannot merge accumulators with different grids".into(),
            ));
        }
        for (a, b) in self.mass_le.iter_mut().zip(&other.mass_le) {
            *a += b;
        }
        for (a, b) in self.mass_ge.iter_mut().zip(&other.mass_ge) {
            *a += b;
        }
        self.elapsed += other.elapsed;
        Ok(())
    }

    pub(crate) fn from_parts(
        x_grid: Vec<f64>,
        mass_le: Vec<f64>,
        mass_ge: Vec<f64>,
        elapsed: f64,
        t_start: f64,
    ) -> Self {
        Self {
            x_grid,
            mass_le,
            mass_ge,
            elapsed,
            t_start,
        }
    }
}

/// Left-endpoint Riemann sum of `F_T` as an [`Observer`](crate::engine::Observer)
/// over an equally spaced sampling grid.
#[derive(Clone, Debug)]
pub struct ErgodicObserver {
    pub acc: ErgodicAccumulator,
    pub horizon: f64,
    pub step: f64,
}

impl crate::engine::Observer for ErgodicObserver {
    fn observe(&mut self, snapshot: &PopulationSnapshot, _: &Genealogy) -> Result<()> {
        let t = snapshot.time;
        let tol = 1e-9 * self.step;
        if t + tol >= self.acc.t_start() && t + tol < self.horizon && t > 0.0 {
            let weight = self.step.min(self.horizon - t);
            self.acc.accumulate(max_offset(snapshot)?.offset, weight)?;
        }
        Ok(())
    }
}

/// Outcome of checking `X(s) <= (s/t) m_t - min(s, t-s)^alpha` on a window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizationSummary {
    pub id: Option<ParticleId>,
    pub violated: bool,
    pub first_violation_time: Option<f64>,
    /// Largest `X(s) - [(s/t) m_t - Gamma(s)]` over the checked grid times.
    pub max_excess: f64,
}

/// Checks the localization predicate at the sample times of a path that fall
/// in `[r, t - r]`.
pub fn localization_check(times: &[f64], values: &[f64], t: f64, r: f64, alpha: f64) -> Result<LocalizationSummary> {
    validate_alpha(alpha)?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(BbmError::Domain {
            name: "t",
            value: t,
            reason: "must be positive",
        });
    }
    if !(r >= 0.0 && r <= t / 2.0) {
        return Err(BbmError::Domain {
            name: "r",
            value: r,
            reason: "must lie in [0, t/2]",
        });
    }
    if times.len() != values.len() || times.is_empty() {
        return Err(BbmError::Config(
            "path times and values must be non-empty and equally long".into(),
        ));
    }
    let tol = 1e-9 * t.max(1.0);
    let (lo, hi) = (r, t - r);
    if times[0] > lo + tol || *times.last().unwrap() < hi - tol {
        return Err(BbmError::Config(format!(
            "path grid [{}, {}] does not cover the window [{lo}, {hi}]",
            times[0],
            times.last().unwrap()
        )));
    }
    let mt = m_t(t);
    let mut max_excess = f64::NEG_INFINITY;
    let mut first = None;
    for (&s, &x) in times.iter().zip(values) {
        if s < lo - tol || s > hi + tol {
            continue;
        }
        let s = s.clamp(0.0, t);
        let excess = x - ((s / t) * mt - envelope_unchecked(t, alpha, s));
        if excess > 0.0 && first.is_none() {
            first = Some(s);
        }
        max_excess = max_excess.max(excess);
    }
    if max_excess == f64::NEG_INFINITY {
        return Err(BbmError::Config(format!(
            "no grid time falls in the window [{lo}, {hi}]"
        )));
    }
    Ok(LocalizationSummary {
        id: None,
        violated: first.is_some(),
        first_violation_time: first,
        max_excess,
    })
}

/// Largest split time over `N_s(x) x N_t(x)`, or `None` when either set is empty.
pub fn extremal_pair_split_scan(
    genealogy: &Genealogy,
    snapshot_s: &PopulationSnapshot,
    snapshot_t: &PopulationSnapshot,
    x: f64,
) -> Result<Option<f64>> {
    extremal_pair_split_scan_with(genealogy, snapshot_s, x, snapshot_t, x)
}

/// [`extremal_pair_split_scan`] with independent thresholds at the two times.
///
/// Marks the nodes of `N_s(x_s)` and their ancestors, then walks each lineage
/// of `N_t(x_t)` upwards to the first marked node, memoizing walks. Linear in
/// the genealogy size; the cross product is never formed.
pub fn extremal_pair_split_scan_with(
    genealogy: &Genealogy,
    snapshot_s: &PopulationSnapshot,
    x_s: f64,
    snapshot_t: &PopulationSnapshot,
    x_t: f64,
) -> Result<Option<f64>> {
    let (s, t) = (snapshot_s.time, snapshot_t.time);
    if !(s > 0.0 && s < t) {
        return Err(BbmError::Config(format!(
            "split scan needs 0 < s < t, got s = {s}, t = {t}"
        )));
    }
    let set_s = resolve_nodes(genealogy, extremal_entries(snapshot_s, x_s)?, s)?;
    let set_t = resolve_nodes(genealogy, extremal_entries(snapshot_t, x_t)?, t)?;
    if set_s.is_empty() || set_t.is_empty() {
        return Ok(None);
    }
    const UNMARKED: u8 = 0;
    const MEMBER: u8 = 1;
    const ANCESTOR: u8 = 2;
    let mut mark = vec![UNMARKED; genealogy.len()];
    for &u in &set_s {
        mark[u] = MEMBER;
    }
    for &u in &set_s {
        let mut cur = genealogy.nodes()[u].parent;
        while let Some(p) = cur {
            if mark[p.index()] == ANCESTOR {
                break;
            }
            mark[p.index()] = ANCESTOR;
            cur = genealogy.node(p).parent;
        }
    }
    // memo: NaN = unvisited, -inf = no marked ancestor
    let mut memo = vec![f64::NAN; genealogy.len()];
    let mut best = f64::NEG_INFINITY;
    let mut path = Vec::new();
    for &v in &set_t {
        path.clear();
        let mut cur = Some(v);
        let mut found = f64::NEG_INFINITY;
        while let Some(n) = cur {
            if !memo[n].is_nan() {
                found = memo[n];
                break;
            }
            path.push(n);
            match mark[n] {
                MEMBER => {
                    found = s;
                    break;
                }
                ANCESTOR => {
                    found = genealogy.nodes()[n].end_time.min(s);
                    break;
                }
                _ => cur = genealogy.nodes()[n].parent.map(|p| p.index()),
            }
        }
        for &n in &path {
            memo[n] = found;
        }
        best = best.max(found);
        if best >= s {
            break;
        }
    }
    // unrelated root trees never share a path
    Ok(Some(if best == f64::NEG_INFINITY { 0.0 } else { best.min(t) }))
}

fn resolve_nodes<'a>(
    genealogy: &Genealogy,
    entries: impl Iterator<Item = &'a SnapshotEntry>,
    time: f64,
) -> Result<Vec<usize>> {
    entries
        .map(|e| {
            let n = e
                .node
                .ok_or_else(|| BbmError::Config("snapshot carries no genealogy nodes".into()))?;
            let node = genealogy
                .nodes()
                .get(n.index())
                .ok_or_else(|| BbmError::Config("snapshot does not belong to this genealogy".into()))?;
            if node.id != e.id || node.birth_time > time || node.end_time < time {
                return Err(BbmError::Config("snapshot does not belong to this genealogy".into()));
            }
            Ok(n.index())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genealogy::ParticleId;
    use approx::assert_abs_diff_eq;

    fn snap(time: f64, xs: &[f64]) -> PopulationSnapshot {
        let mut id = ParticleId::ROOT;
        PopulationSnapshot {
            time,
            entries: xs
                .iter()
                .map(|&p| {
                    id = id.child(0);
                    SnapshotEntry {
                        id,
                        node: None,
                        position: p,
                        lineage: 0,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn max_offset_values() {
        let t = 7.0;
        assert_abs_diff_eq!(max_offset(&snap(t, &[m_t(t)])).unwrap().offset, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            max_offset(&snap(1.0, &[1.0, 2.0])).unwrap().offset,
            0.585_786,
            epsilon = 1e-6
        );
        assert!(max_offset(&snap(1.0, &[])).is_err());
        assert!(max_offset(&snap(0.0, &[1.0])).is_err());
        let a = max_offset(&snap(2.0, &[0.1, 0.5])).unwrap().offset;
        let b = max_offset(&snap(2.0, &[0.1, 0.5, -3.0])).unwrap().offset;
        assert!(b >= a);
    }

    #[test]
    fn max_offset_ties_take_smallest_id() {
        let s = snap(2.0, &[1.0, 1.0, 1.0]);
        let smallest = s.entries.iter().map(|e| e.id).min().unwrap();
        assert_eq!(max_offset(&s).unwrap().argmax, smallest);
    }

    #[test]
    fn extremal_sets() {
        let s = snap(3.0, &[-1.0, 2.0, 3.5, 0.2]);
        assert_eq!(extremal_set(&s, -1e9).unwrap().len(), 4);
        let top = max_offset(&s).unwrap();
        assert!(extremal_set(&s, top.offset + 1e-9).unwrap().is_empty());
        assert_eq!(extremal_set(&s, top.offset).unwrap(), vec![top.argmax]);
        let a = extremal_set(&s, -2.0).unwrap();
        let b = extremal_set(&s, -0.5).unwrap();
        assert!(b.iter().all(|id| a.contains(id)));
    }

    #[test]
    fn derivative_martingale_values() {
        let t = 2.0;
        assert_eq!(derivative_martingale(&snap(t, &[SQRT_2 * t])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            derivative_martingale(&snap(t, &[SQRT_2 * t - 1.0])).unwrap(),
            0.243_116_734,
            epsilon = 1e-9
        );
        let s = snap(1.5, &[0.3, -2.0, 1.9, 0.7, 1.1]);
        let mut r = s.clone();
        r.entries.reverse();
        assert_eq!(
            derivative_martingale(&s).unwrap().to_bits(),
            derivative_martingale(&r).unwrap().to_bits()
        );
    }

    #[test]
    fn ergodic_accumulator() {
        let mut acc = ErgodicAccumulator::new(vec![-1.0, 0.0, 1.0], 0.0).unwrap();
        assert!(acc.result().is_err());
        for _ in 0..50 {
            acc.accumulate(0.0, 0.1).unwrap();
        }
        assert_eq!(acc.result().unwrap(), vec![0.0, 1.0, 1.0]);
        let mut alt = ErgodicAccumulator::new(vec![0.0], 0.0).unwrap();
        for i in 0..10 {
            alt.accumulate(if i % 2 == 0 { 2.0 } else { -2.0 }, 0.5).unwrap();
        }
        assert_eq!(alt.result().unwrap(), vec![0.5]);
        assert!(alt.accumulate(0.0, 0.0).is_err());
        assert!(ErgodicAccumulator::new(vec![1.0, 0.0], 0.0).is_err());
        let mut m = acc.clone();
        m.merge(&acc).unwrap();
        assert_eq!(m.result().unwrap(), acc.result().unwrap());
        assert_eq!(default_x_grid().len(), 41);
        assert_eq!(*default_x_grid().last().unwrap(), 2.0);
    }

    fn grid(t: f64, dt: f64) -> Vec<f64> {
        let n = (t / dt).round() as usize;
        (0..=n).map(|k| k as f64 * dt).collect()
    }

    #[test]
    fn localization_cases() {
        let times = grid(10.0, 0.01);
        let deep = vec![-1e6; times.len()];
        assert!(!localization_check(&times, &deep, 10.0, 1.0, 0.4).unwrap().violated);

        // flat zero path at t = 10, alpha = 0.4. m_10 = 11.6998753234582, so at
        // s = 5 the line is 0.5 m_10 - 5^0.4 = 3.94628372301324 above 0. At
        // s = r = 1 it is 0.1 m_10 - 1 = 0.169987532345823, still positive.
        let zero = vec![0.0; times.len()];
        assert_abs_diff_eq!(m_t(10.0), 11.699_875_323_458_23, epsilon = 1e-12);
        let mid = 0.5 * m_t(10.0) - 5f64.powf(0.4);
        assert_abs_diff_eq!(mid, 3.946_283_723_013_237, epsilon = 1e-12);
        let res = localization_check(&times, &zero, 10.0, 1.0, 0.4).unwrap();
        assert!(!res.violated);
        assert!(res.first_violation_time.is_none());
        // the tightest point of the window is s = 1 where the line is 0.1 m_10 - 1
        assert_abs_diff_eq!(res.max_excess, -(0.1 * m_t(10.0) - 1.0), epsilon = 1e-9);

        let on_line: Vec<f64> = times.iter().map(|&s| s / 10.0 * m_t(10.0)).collect();
        let res = localization_check(&times, &on_line, 10.0, 1.0, 0.4).unwrap();
        assert!(res.violated);
        assert_abs_diff_eq!(res.first_violation_time.unwrap(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(res.max_excess, 5f64.powf(0.4), epsilon = 1e-9);

        // degenerate window r = t/2
        let res = localization_check(&times, &on_line, 10.0, 5.0, 0.4).unwrap();
        assert_abs_diff_eq!(res.max_excess, 5f64.powf(0.4), epsilon = 1e-9);

        assert!(localization_check(&times[200..], &zero[200..], 10.0, 1.0, 0.4).is_err());
        assert!(localization_check(&times, &zero, 10.0, 6.0, 0.4).is_err());
        assert!(localization_check(&times, &zero, 10.0, 1.0, 0.7).is_err());
    }

    #[test]
    fn neumaier_is_accurate() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(neumaier_sum(v), 2.0);
    }
}
