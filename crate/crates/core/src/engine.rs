//! Binary branching Brownian motion: unit-rate exponential lifetimes, binary
//! splits and unit-variance Brownian displacement.
//!
//! Every particle draws from its own stream, keyed by the run's root stream
//! and the particle's tree coordinates. The draws of a particle are,
//! in order: its lifetime at birth, then one standard normal per segment
//! travelled (segments end at synchronization times and at the branch time).
//! Consequently pruning or reordering never changes the randomness of a
//! surviving particle.
//!
//! Event mode synchronizes only at requested snapshot times, at multiples of
//! `sync_interval` and at the horizon. Grid mode synchronizes on every grid
//! point and stores each particle's grid samples in the genealogy. In grid
//! mode path predicates are only evaluated at grid times: excursions between
//! two grid points are not detected.

use std::f64::consts::SQRT_2;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{ensure_finite, BbmError, Result};
use crate::genealogy::{EndKind, Genealogy, NodeIdx, ParticleId};
use crate::stochastic::{RngStreamKey, StreamBase, StreamRng};

pub const DEFAULT_GRID_DT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RunMode {
    Event,
    Grid { dt: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PruneMode {
    None,
    /// Remove particles with `X(s) < sqrt(2) s - offset`.
    LineBarrier {
        offset: f64,
    },
    /// Remove particles more than `gap` below the current maximum.
    GapToMax {
        gap: f64,
    },
    /// Keep the `max` highest particles.
    CapCount {
        max: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneConfig {
    pub mode: PruneMode,
    /// Pruning is applied only at synchronization times strictly after this.
    pub active_after: f64,
}

impl PruneConfig {
    pub const NONE: PruneConfig = PruneConfig {
        mode: PruneMode::None,
        active_after: 0.0,
    };

    pub fn new(mode: PruneMode) -> Self {
        Self {
            mode,
            active_after: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, value| {
            Err(BbmError::Domain {
                name,
                value,
                reason: "pruning parameter must be positive",
            })
        };
        match self.mode {
            PruneMode::None => Ok(()),
            PruneMode::LineBarrier { offset } if !(offset > 0.0) => bad("A", offset),
            PruneMode::GapToMax { gap } if !(gap > 0.0) => bad("L", gap),
            PruneMode::CapCount { max: 0 } => bad("N_max", 0.0),
            _ => Ok(()),
        }
    }
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self::NONE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub horizon: f64,
    pub mode: RunMode,
    pub snapshot_times: Vec<f64>,
    /// Extra synchronization step in event mode (pruning and observers run there).
    pub sync_interval: Option<f64>,
    pub prune: PruneConfig,
    pub root_stream: RngStreamKey,
    pub hard_particle_limit: usize,
    pub record_genealogy: bool,
}

impl RunConfig {
    pub fn event(horizon: f64, root_stream: RngStreamKey) -> Self {
        Self {
            horizon,
            mode: RunMode::Event,
            snapshot_times: vec![horizon],
            sync_interval: None,
            prune: PruneConfig::NONE,
            root_stream,
            hard_particle_limit: 20_000_000,
            record_genealogy: true,
        }
    }

    pub fn grid(horizon: f64, dt: f64, root_stream: RngStreamKey) -> Self {
        Self {
            mode: RunMode::Grid { dt },
            ..Self::event(horizon, root_stream)
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("T", self.horizon)?;
        if !(self.horizon > 0.0) {
            return Err(BbmError::Domain {
                name: "T",
                value: self.horizon,
                reason: "horizon must be positive",
            });
        }
        if let RunMode::Grid { dt } = self.mode {
            if !(dt > 0.0 && dt <= 0.1) {
                return Err(BbmError::Domain {
                    name: "dt",
                    value: dt,
                    reason: "grid step must lie in (0, 0.1]",
                });
            }
        }
        if let Some(step) = self.sync_interval {
            if !(step > 0.0) || !step.is_finite() {
                return Err(BbmError::Domain {
                    name: "sync_interval",
                    value: step,
                    reason: "must be positive",
                });
            }
        }
        for w in self.snapshot_times.windows(2) {
            if !(w[0] <= w[1]) {
                return Err(BbmError::Config("snapshot_times must be sorted".into()));
            }
        }
        if let Some(&bad) = self.snapshot_times.iter().find(|&&s| !(s >= 0.0 && s <= self.horizon)) {
            return Err(BbmError::Domain {
                name: "snapshot_times",
                value: bad,
                reason: "snapshot times must lie in [0, T]",
            });
        }
        if self.hard_particle_limit == 0 {
            return Err(BbmError::Config("hard_particle_limit must be at least 1".into()));
        }
        self.prune.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnapshotEntry {
    pub id: ParticleId,
    /// Arena index in the run's genealogy, when one is recorded.
    pub node: Option<NodeIdx>,
    pub position: f64,
    /// Index of the initial particle this one descends from.
    pub lineage: u32,
}

/// Positions of the alive population at one time, in canonical order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PopulationSnapshot {
    pub time: f64,
    pub entries: Vec<SnapshotEntry>,
}

impl PopulationSnapshot {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.position)
    }
}

/// Receives the population at every synchronization time, in time order.
pub trait Observer {
    fn observe(&mut self, snapshot: &PopulationSnapshot, genealogy: &Genealogy) -> Result<()>;
}

impl Observer for () {
    fn observe(&mut self, _: &PopulationSnapshot, _: &Genealogy) -> Result<()> {
        Ok(())
    }
}

impl<F> Observer for F
where
    F: FnMut(&PopulationSnapshot, &Genealogy) -> Result<()>,
{
    fn observe(&mut self, snapshot: &PopulationSnapshot, genealogy: &Genealogy) -> Result<()> {
        self(snapshot, genealogy)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunStats {
    pub branch_events: u64,
    pub killed: u64,
    pub max_alive: usize,
    pub final_alive: usize,
    pub time_reached: f64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub genealogy: Genealogy,
    pub snapshots: Vec<PopulationSnapshot>,
    pub stats: RunStats,
}

/// Starting particle for runs that continue from a given population.
#[derive(Clone, Copy, Debug)]
pub struct Seed {
    pub id: ParticleId,
    pub stream: RngStreamKey,
    pub position: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Live {
    pub id: ParticleId,
    pub base: StreamBase,
    pub rng: StreamRng,
    pub node: Option<NodeIdx>,
    pub lineage: u32,
    pub pos: f64,
    pub time: f64,
    pub branch_at: f64,
}

impl Live {
    fn born(id: ParticleId, base: StreamBase, node: Option<NodeIdx>, lineage: u32, pos: f64, time: f64) -> Self {
        let mut rng = base.stream(id.0);
        let life: f64 = rng.sample(Exp1);
        Self {
            id,
            base,
            rng,
            node,
            lineage,
            pos,
            time,
            branch_at: time + life,
        }
    }

    #[inline]
    fn move_to(&mut self, t: f64) {
        let dt = t - self.time;
        if dt > 0.0 {
            let z: f64 = self.rng.sample(StandardNormal);
            self.pos += dt.sqrt() * z;
        }
        self.time = t;
    }
}

/// A run in progress. [`run`] drives one from start to horizon; the stepwise
/// interface exists for checkpointing and resumption.
pub struct Simulation {
    pub(crate) config: RunConfig,
    pub(crate) alive: Vec<Live>,
    pub(crate) genealogy: Genealogy,
    pub(crate) snapshots: Vec<PopulationSnapshot>,
    pub(crate) stats: RunStats,
    pub(crate) time: f64,
    pub(crate) start: f64,
    sync_times: Vec<f64>,
    pub(crate) next_sync: usize,
    scratch: PopulationSnapshot,
}

impl Simulation {
    /// A run started from a single particle at the origin at time 0.
    pub fn new(config: RunConfig) -> Result<Self> {
        let root = Seed {
            id: ParticleId::ROOT,
            stream: config.root_stream,
            position: 0.0,
        };
        Self::from_population(config, 0.0, &[root])
    }

    /// A run continuing from `seeds` at time `start`. Each seed draws a fresh
    /// lifetime from its own stream; seed `i` labels its descendants with lineage `i`.
    pub fn from_population(config: RunConfig, start: f64, seeds: &[Seed]) -> Result<Self> {
        config.validate()?;
        if !(start >= 0.0 && start < config.horizon) {
            return Err(BbmError::Domain {
                name: "start",
                value: start,
                reason: "start time must lie in [0, T)",
            });
        }
        let mut genealogy = match (config.record_genealogy, config.mode) {
            (true, RunMode::Grid { dt }) => Genealogy::with_grid(dt),
            _ => Genealogy::new(),
        };
        let mut alive = Vec::with_capacity(seeds.len());
        for (i, s) in seeds.iter().enumerate() {
            ensure_finite("position", s.position)?;
            let node = config
                .record_genealogy
                .then(|| genealogy.push_root(s.id, start, s.position));
            alive.push(Live::born(s.id, s.stream.base(), node, i as u32, s.position, start));
        }
        let sync_times = sync_schedule(&config, start);
        let mut sim = Self {
            config,
            alive,
            genealogy,
            snapshots: Vec::new(),
            stats: RunStats {
                time_reached: start,
                ..RunStats::default()
            },
            time: start,
            start,
            sync_times,
            next_sync: 0,
            scratch: PopulationSnapshot::default(),
        };
        sim.stats.max_alive = sim.alive.len();
        if let RunMode::Grid { dt } = sim.config.mode {
            if let Some(k) = grid_index(start, dt) {
                sim.record_grid(k);
            }
        }
        if sim.config.snapshot_times.contains(&start) {
            sim.fill_scratch();
            sim.snapshots.push(sim.scratch.clone());
        }
        Ok(sim)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn alive_count(&self) -> usize {
        self.alive.len()
    }

    pub fn genealogy(&self) -> &Genealogy {
        &self.genealogy
    }

    pub fn snapshots(&self) -> &[PopulationSnapshot] {
        &self.snapshots
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    pub fn is_finished(&self) -> bool {
        self.next_sync >= self.sync_times.len()
    }

    /// Current population in canonical order.
    pub fn current_snapshot(&self) -> PopulationSnapshot {
        PopulationSnapshot {
            time: self.time,
            entries: self.alive.iter().map(live_entry).collect(),
        }
    }

    /// Processes every synchronization time `<= t_stop`.
    pub fn advance_until<O: Observer + ?Sized>(&mut self, t_stop: f64, observer: &mut O) -> Result<()> {
        while let Some(&t) = self.sync_times.get(self.next_sync) {
            if t > t_stop {
                break;
            }
            self.step_to(t)?;
            self.next_sync += 1;
            let last = self.next_sync == self.sync_times.len();
            if self.prune_active(t) {
                self.prune_alive(t);
            }
            if let RunMode::Grid { dt } = self.config.mode {
                if let Some(k) = grid_index(t, dt) {
                    self.record_grid(k);
                }
            }
            self.stats.time_reached = t;
            self.fill_scratch();
            if self.alive.is_empty() {
                return Err(BbmError::EmptyPopulation(t));
            }
            observer.observe(&self.scratch, &self.genealogy)?;
            if self.config.snapshot_times.contains(&t) {
                self.snapshots.push(self.scratch.clone());
            }
            if last {
                self.close_at_horizon();
            }
        }
        Ok(())
    }

    pub fn finish(self) -> RunOutput {
        let mut stats = self.stats;
        stats.final_alive = self.alive.len();
        RunOutput {
            genealogy: self.genealogy,
            snapshots: self.snapshots,
            stats,
        }
    }

    fn prune_active(&self, t: f64) -> bool {
        self.config.prune.mode != PruneMode::None && t > self.config.prune.active_after
    }

    fn close_at_horizon(&mut self) {
        let t = self.config.horizon;
        for p in &self.alive {
            if let Some(n) = p.node {
                self.genealogy.close(n, t, p.pos, EndKind::ReachedHorizon);
            }
        }
    }

    fn record_grid(&mut self, k: u32) {
        for p in &self.alive {
            if let Some(n) = p.node {
                self.genealogy.record_grid(n, k, p.pos);
            }
        }
    }

    fn fill_scratch(&mut self) {
        self.scratch.time = self.time;
        self.scratch.entries.clear();
        self.scratch.entries.extend(self.alive.iter().map(live_entry));
    }

    /// Moves every alive particle to `t`, resolving all branchings before `t`.
    /// Offspring replace their parent in place, which keeps the alive list in
    /// lexicographic tree order.
    fn step_to(&mut self, t: f64) -> Result<()> {
        let limit = self.config.hard_particle_limit;
        let record = self.config.record_genealogy;
        let current = std::mem::take(&mut self.alive);
        let remaining_total = current.len();
        let mut next: Vec<Live> = Vec::with_capacity(current.len() + current.len() / 4 + 4);
        let mut stack: Vec<Live> = Vec::new();
        for (i, p) in current.into_iter().enumerate() {
            stack.push(p);
            while let Some(mut p) = stack.pop() {
                if p.branch_at < t {
                    let tb = p.branch_at;
                    p.move_to(tb);
                    self.stats.branch_events += 1;
                    let kids = match (record, p.node) {
                        (true, Some(n)) => self.genealogy.branch(n, tb, p.pos).map(Some),
                        _ => [None, None],
                    };
                    stack.push(Live::born(p.id.child(1), p.base, kids[1], p.lineage, p.pos, tb));
                    stack.push(Live::born(p.id.child(0), p.base, kids[0], p.lineage, p.pos, tb));
                    let alive_now = next.len() + stack.len() + (remaining_total - i - 1);
                    if alive_now > limit {
                        self.time = tb;
                        self.stats.time_reached = tb;
                        return Err(BbmError::ParticleLimit {
                            limit,
                            time: tb,
                            alive: alive_now,
                        });
                    }
                } else {
                    p.move_to(t);
                    next.push(p);
                }
            }
        }
        self.alive = next;
        self.time = t;
        self.stats.max_alive = self.stats.max_alive.max(self.alive.len());
        Ok(())
    }

    fn prune_alive(&mut self, t: f64) {
        let positions: Vec<f64> = self.alive.iter().map(|p| p.pos).collect();
        let keep = prune_mask(&positions, t, &self.config.prune.mode);
        if keep.iter().all(|&k| k) {
            return;
        }
        let mut kept = Vec::with_capacity(self.alive.len());
        for (p, k) in std::mem::take(&mut self.alive).into_iter().zip(keep) {
            if k {
                kept.push(p);
            } else {
                self.stats.killed += 1;
                if let Some(n) = p.node {
                    self.genealogy.close(n, t, p.pos, EndKind::KilledByPruning);
                }
            }
        }
        self.alive = kept;
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn restore(
        config: RunConfig,
        time: f64,
        alive: Vec<Live>,
        genealogy: Genealogy,
        snapshots: Vec<PopulationSnapshot>,
        stats: RunStats,
        start: f64,
        next_sync: usize,
    ) -> Result<Self> {
        config.validate()?;
        let sync_times = sync_schedule(&config, start);
        Ok(Self {
            config,
            alive,
            genealogy,
            snapshots,
            stats,
            time,
            start,
            sync_times,
            next_sync,
            scratch: PopulationSnapshot::default(),
        })
    }
}

fn live_entry(p: &Live) -> SnapshotEntry {
    SnapshotEntry {
        id: p.id,
        node: p.node,
        position: p.pos,
        lineage: p.lineage,
    }
}

fn grid_index(t: f64, dt: f64) -> Option<u32> {
    let q = t / dt;
    let k = q.round();
    ((q - k).abs() < 1e-9).then_some(k as u32)
}

/// Sorted synchronization times in `(start, T]`.
fn sync_schedule(config: &RunConfig, start: f64) -> Vec<f64> {
    let t_end = config.horizon;
    let mut times: Vec<f64> = Vec::new();
    let push_grid = |step: f64, times: &mut Vec<f64>| {
        let mut k = (start / step).floor() as u64;
        loop {
            let t = k as f64 * step;
            if t > start && t < t_end && (t_end - t) > 1e-12 * step.max(1.0) {
                times.push(t);
            }
            if t >= t_end {
                break;
            }
            k += 1;
        }
    };
    match config.mode {
        RunMode::Grid { dt } => push_grid(dt, &mut times),
        RunMode::Event => {
            if let Some(step) = config.sync_interval {
                push_grid(step, &mut times);
            }
        }
    }
    times.extend(
        config
            .snapshot_times
            .iter()
            .copied()
            .filter(|&s| s > start && s < t_end),
    );
    times.push(t_end);
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    times
}

/// Keep flags for a population in canonical order. The first maximal
/// position is always kept.
pub fn prune_mask(positions: &[f64], time: f64, mode: &PruneMode) -> Vec<bool> {
    let n = positions.len();
    if n == 0 {
        return Vec::new();
    }
    let mut arg = 0;
    for (i, &x) in positions.iter().enumerate() {
        if x > positions[arg] {
            arg = i;
        }
    }
    let max = positions[arg];
    let mut keep: Vec<bool> = match *mode {
        PruneMode::None => vec![true; n],
        PruneMode::LineBarrier { offset } => {
            let line = SQRT_2 * time - offset;
            positions.iter().map(|&x| x >= line).collect()
        }
        PruneMode::GapToMax { gap } => positions.iter().map(|&x| x >= max - gap).collect(),
        PruneMode::CapCount { max: cap } => {
            if cap >= n {
                vec![true; n]
            } else {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| positions[b].partial_cmp(&positions[a]).unwrap().then(a.cmp(&b)));
                let mut k = vec![false; n];
                for &i in &order[..cap] {
                    k[i] = true;
                }
                k
            }
        }
    };
    keep[arg] = true;
    keep
}

/// Splits a snapshot into survivors and removed ids under `config`.
pub fn apply_pruning(snapshot: &PopulationSnapshot, config: &PruneConfig) -> (PopulationSnapshot, Vec<ParticleId>) {
    let positions: Vec<f64> = snapshot.positions().collect();
    let active = snapshot.time > config.active_after || config.mode == PruneMode::None;
    let keep = if active {
        prune_mask(&positions, snapshot.time, &config.mode)
    } else {
        vec![true; positions.len()]
    };
    let mut survivors = PopulationSnapshot {
        time: snapshot.time,
        entries: Vec::with_capacity(snapshot.len()),
    };
    let mut killed = Vec::new();
    for (e, k) in snapshot.entries.iter().zip(keep) {
        if k {
            survivors.entries.push(*e);
        } else {
            killed.push(e.id);
        }
    }
    (survivors, killed)
}

/// Runs `config` from a single particle at the origin to the horizon.
pub fn run<O: Observer + ?Sized>(config: RunConfig, observer: &mut O) -> Result<RunOutput> {
    let horizon = config.horizon;
    let mut sim = Simulation::new(config)?;
    sim.advance_until(horizon, observer)?;
    Ok(sim.finish())
}
