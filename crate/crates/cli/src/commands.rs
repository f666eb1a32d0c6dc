//! Subcommand schemas and runners.

use bbm_core::lab::bkr::{bkr_campaign, BkrCampaign};
use bbm_core::lab::decorrelation::{exp_decorrelation, DecorrelationConfig};
use bbm_core::lab::early::{exp_early_branching, EarlyConfig};
use bbm_core::lab::ergodic::{exp_ergodic, ErgodicConfig};
use bbm_core::lab::localization::{exp_localization, LocalizationConfig};
use bbm_core::lab::oracles::{bridge_check, moment_battery, moment_report, BridgeCheckConfig, MomentBatteryConfig};
use bbm_core::lab::tail::{exp_right_tail, TailConfig};
use bbm_core::lab::{tags, ExperimentReport, Table};
use bbm_core::{
    checkpoint, max_offset, BbmError, Observer, PopulationSnapshot, PruneConfig, PruneMode, RngStreamKey, RunConfig,
    RunMode, Simulation,
};

use crate::config::{Key, Kind, Resolved};
use crate::CliError;

pub const SUBCOMMANDS: [&str; 9] = [
    "simulate",
    "ergodic",
    "early-branching",
    "localization",
    "decorrelate",
    "bkr-check",
    "bridge-check",
    "moment-check",
    "tail",
];

fn list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Subcommand-specific keys with their defaults.
pub fn schema(cmd: &str) -> Option<Vec<Key>> {
    use Kind::*;
    Some(match cmd {
        "simulate" => vec![
            Key::new("T", 10.0, Float, "horizon"),
            Key::new(
                "mode",
                "event",
                Choice(&["event", "grid"]),
                "event-driven or fixed-step",
            ),
            Key::new("dt", 0.01, Float, "grid step"),
            Key::new("prune", "none", Choice(&["none", "gap", "line", "cap"]), "pruning rule"),
            Key::new("L", 8.0, Float, "gap below the maximum for prune = gap"),
            Key::new("offset", 5.0, Float, "line barrier offset for prune = line"),
            Key::new("cap", 100_000, Int, "population cap for prune = cap"),
            Key::new("active_after", 0.0, Float, "pruning starts after this time"),
            Key::new(
                "sync",
                "",
                OptFloat,
                "synchronization interval (default 0.1 when pruning)",
            ),
            Key::new("snapshots", "", OptText, "snapshot times (default: T)"),
            Key::new("genealogy", false, Bool, "record and write the genealogy"),
            Key::new("limit", 5_000_000, Int, "hard particle limit"),
            Key::new("checkpoint", "", OptText, "write a checkpoint to this path"),
            Key::new("checkpoint_at", "", OptFloat, "time at which to checkpoint"),
            Key::new("resume", "", OptText, "resume from this checkpoint"),
        ],
        "ergodic" => {
            let d = ErgodicConfig::default();
            vec![
                Key::new("T", d.horizon, Float, "horizon"),
                Key::new("eps", d.eps, Float, "integration starts at eps T"),
                Key::new("L", d.gap, Float, "pruning gap below the maximum"),
                Key::new("dt_sample", d.dt_sample, Float, "sampling step"),
                Key::new(
                    "x_grid",
                    list(&d.x_grid),
                    FloatList,
                    "offsets at which F_T is evaluated",
                ),
                Key::new("seeds", d.seeds, Int, "independent runs"),
                Key::new("t0", d.t0, Float, "derivative martingale time; pruning starts after it"),
                Key::new("fit_lo", d.fit_lo, Float, "fit window start"),
                Key::new("fit_hi", d.fit_hi, Float, "fit window end"),
                Key::new("beta", d.beta, Float, "schedule exponent for exp(n^beta)"),
                Key::new("x_sub", d.x_sub, Float, "indicator level for the schedule check"),
                Key::new("sensitivity", d.sensitivity, Bool, "rerun with gap 2L"),
                Key::new("limit", d.particle_limit, Int, "hard particle limit per run"),
            ]
        }
        "early-branching" => {
            let d = EarlyConfig::default();
            vec![
                Key::new("s", d.s, Float, "first time"),
                Key::new("t", d.t, Float, "second time"),
                Key::new("x", d.x_s, Float, "extremal threshold at both times"),
                Key::new("x_s", "", OptFloat, "threshold at s (default x)"),
                Key::new("x_t", "", OptFloat, "threshold at t (default x)"),
                Key::new("R", list(&d.r_list), FloatList, "split-time levels"),
                Key::new("trials", d.trials, Int, "trials"),
            ]
        }
        "localization" => {
            let d = LocalizationConfig::default();
            vec![
                Key::new("t", d.t, Float, "horizon"),
                Key::new("x", d.x, Float, "extremal threshold"),
                Key::new("alpha", d.alpha, Float, "envelope exponent in (0, 1/2]"),
                Key::new("r", list(&d.r_list), FloatList, "window offsets"),
                Key::new("trials", d.trials, Int, "trials"),
                Key::new("dt", d.dt, Float, "grid step"),
            ]
        }
        "decorrelate" => {
            let d = DecorrelationConfig::default();
            vec![
                Key::new("R", d.r, Float, "conditioning time"),
                Key::new("s", d.s, Float, "first time"),
                Key::new("t", d.t, Float, "second time"),
                Key::new("x", d.x, Float, "threshold at s"),
                Key::new("y", d.y, Float, "threshold at t"),
                Key::new("outer", d.outer, Int, "outer trials"),
                Key::new("inner", d.inner, Int, "resamples per outer trial"),
            ]
        }
        "bkr-check" => {
            let d = BkrCampaign::default();
            vec![
                Key::new("instances", d.instances, Int, "random instances"),
                Key::new("max_n", d.max_n, Int, "largest number of coordinates"),
                Key::new("max_space", d.max_space, Int, "largest coordinate space"),
            ]
        }
        "bridge-check" => {
            let d = BridgeCheckConfig::default();
            vec![
                Key::new("paths", d.paths, Int, "paths per closed form"),
                Key::new("steps", d.steps, Int, "monitoring steps"),
                Key::new("tuples", d.tuples, Int, "random line-bound tuples"),
                Key::new("tuple_paths", d.tuple_paths, Int, "paths per tuple"),
            ]
        }
        "moment-check" => {
            let d = MomentBatteryConfig::default();
            vec![
                Key::new("trials", d.trials, Int, "trials per check"),
                Key::new("nodes", d.nodes, Int, "quadrature nodes"),
            ]
        }
        "tail" => {
            let d = TailConfig::default();
            vec![
                Key::new("t", d.t, Float, "horizon"),
                Key::new("trials", d.trials, Int, "trials"),
                Key::new("y", list(&d.y_grid), FloatList, "tail levels"),
                Key::new("fit_lo", d.fit_lo, Float, "fit window start"),
                Key::new("fit_hi", d.fit_hi, Float, "fit window end"),
                Key::new("min_hits", d.min_hits, Int, "exceedances needed to enter the fit"),
            ]
        }
        _ => return None,
    })
}

/// Front statistics at every synchronization time.
struct FrontLog(Table);

impl Observer for FrontLog {
    fn observe(&mut self, snap: &PopulationSnapshot, _: &bbm_core::Genealogy) -> bbm_core::Result<()> {
        if snap.time > 0.0 && !snap.is_empty() {
            let m = max_offset(snap)?;
            self.0.push(vec![
                snap.time.into(),
                snap.len().into(),
                m.position.into(),
                m.offset.into(),
            ]);
        }
        Ok(())
    }
}

fn simulate(cfg: &Resolved, stream: RngStreamKey) -> Result<ExperimentReport, CliError> {
    let horizon = cfg.float("T");
    let mode = match cfg.raw("mode") {
        "grid" => RunMode::Grid { dt: cfg.float("dt") },
        _ => RunMode::Event,
    };
    let prune_mode = match cfg.raw("prune") {
        "gap" => PruneMode::GapToMax { gap: cfg.float("L") },
        "line" => PruneMode::LineBarrier {
            offset: cfg.float("offset"),
        },
        "cap" => PruneMode::CapCount { max: cfg.usize("cap") },
        _ => PruneMode::None,
    };
    let limit = cfg.usize("limit");
    if prune_mode == PruneMode::None && horizon.exp() > limit as f64 {
        return Err(CliError::Resource(format!(
            "unpruned run to T = {horizon} expects about e^T = {:.3e} particles, above the limit {limit}",
            horizon.exp()
        )));
    }
    let snapshots = match cfg.opt_text("snapshots") {
        Some(s) => s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| CliError::Config(format!("key `snapshots`: bad time `{t}`")))
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![horizon],
    };
    let sync = cfg.opt_float("sync").or((prune_mode != PruneMode::None).then_some(0.1));
    let rc = RunConfig {
        horizon,
        mode,
        snapshot_times: snapshots,
        sync_interval: sync,
        prune: PruneConfig {
            mode: prune_mode,
            active_after: cfg.float("active_after"),
        },
        root_stream: stream,
        hard_particle_limit: limit,
        record_genealogy: cfg.flag("genealogy") || matches!(mode, RunMode::Grid { .. }),
    };
    let mut front = FrontLog(Table::new("front", &["time", "alive", "max", "offset"]));
    let mut notes = Vec::new();
    let mut sim = match cfg.opt_text("resume") {
        Some(path) => {
            let (sim, _) = checkpoint::load(std::path::Path::new(path), rc)?;
            notes.push(format!("resumed from {path} at t = {}", sim.time()));
            sim
        }
        None => Simulation::new(rc)?,
    };
    if let (Some(path), Some(at)) = (cfg.opt_text("checkpoint"), cfg.opt_float("checkpoint_at")) {
        sim.advance_until(at, &mut front)?;
        checkpoint::save(std::path::Path::new(path), &sim, &[])?;
        notes.push(format!("checkpoint written to {path} at t = {}", sim.time()));
    }
    sim.advance_until(horizon, &mut front)?;
    let out = sim.finish();

    let mut pop = Table::new("population", &["time", "id", "position", "offset", "lineage"]);
    for snap in &out.snapshots {
        let mt = if snap.time > 0.0 {
            bbm_core::stochastic::centering(snap.time).ok()
        } else {
            None
        };
        for e in &snap.entries {
            pop.push(vec![
                snap.time.into(),
                e.id.to_string().into(),
                e.position.into(),
                mt.map(|m| e.position - m).into(),
                e.lineage.into(),
            ]);
        }
    }
    let s = out.stats;
    let mut stats = Table::new(
        "stats",
        &["branch_events", "killed", "max_alive", "final_alive", "time_reached"],
    );
    stats.push(vec![
        s.branch_events.into(),
        s.killed.into(),
        s.max_alive.into(),
        s.final_alive.into(),
        s.time_reached.into(),
    ]);
    let mut rep = ExperimentReport::new("simulate");
    rep.tables = vec![pop, front.0, stats];
    if cfg.flag("genealogy") {
        let g = &out.genealogy;
        let mut t = Table::new(
            "genealogy",
            &[
                "node",
                "id",
                "parent",
                "depth",
                "birth_time",
                "birth_position",
                "end_time",
                "end_position",
                "end_kind",
            ],
        );
        for (i, n) in g.nodes().iter().enumerate() {
            t.push(vec![
                i.into(),
                n.id.to_string().into(),
                n.parent.map(|p| p.0).into(),
                n.depth.into(),
                n.birth_time.into(),
                n.birth_position.into(),
                n.end_time.into(),
                n.end_position.into(),
                format!("{:?}", n.end_kind).into(),
            ]);
        }
        rep.tables.push(t);
    }
    rep.notes = notes;
    Ok(rep)
}

pub fn run(cmd: &str, cfg: &Resolved) -> Result<ExperimentReport, CliError> {
    let seed = cfg.int("seed");
    let root = RngStreamKey::root(seed);
    let rep = match cmd {
        "simulate" => simulate(cfg, root.derive(tags::SIMULATE))?,
        "ergodic" => {
            let c = ErgodicConfig {
                horizon: cfg.float("T"),
                eps: cfg.float("eps"),
                gap: cfg.float("L"),
                dt_sample: cfg.float("dt_sample"),
                x_grid: cfg.list("x_grid"),
                seeds: cfg.int("seeds"),
                t0: cfg.float("t0"),
                fit_lo: cfg.float("fit_lo"),
                fit_hi: cfg.float("fit_hi"),
                beta: cfg.float("beta"),
                x_sub: cfg.float("x_sub"),
                sensitivity: cfg.flag("sensitivity"),
                particle_limit: cfg.usize("limit"),
                ..ErgodicConfig::default()
            };
            exp_ergodic(&c, root.derive(tags::ERGODIC))?.report(&c, seed)
        }
        "early-branching" => {
            let x = cfg.float("x");
            let c = EarlyConfig {
                s: cfg.float("s"),
                t: cfg.float("t"),
                x_s: cfg.opt_float("x_s").unwrap_or(x),
                x_t: cfg.opt_float("x_t").unwrap_or(x),
                r_list: cfg.list("R"),
                trials: cfg.int("trials"),
            };
            exp_early_branching(&c, root.derive(tags::EARLY))?.report(&c, seed)
        }
        "localization" => {
            let c = LocalizationConfig {
                t: cfg.float("t"),
                x: cfg.float("x"),
                alpha: cfg.float("alpha"),
                r_list: cfg.list("r"),
                trials: cfg.int("trials"),
                dt: cfg.float("dt"),
            };
            exp_localization(&c, root.derive(tags::LOCALIZATION))?.report(&c, seed)
        }
        "decorrelate" => {
            let c = DecorrelationConfig {
                r: cfg.float("R"),
                s: cfg.float("s"),
                t: cfg.float("t"),
                x: cfg.float("x"),
                y: cfg.float("y"),
                outer: cfg.int("outer"),
                inner: cfg.int("inner"),
                ..DecorrelationConfig::default()
            };
            exp_decorrelation(&c, root.derive(tags::DECORRELATION))?.report(&c, seed)
        }
        "bkr-check" => {
            let c = BkrCampaign {
                instances: cfg.int("instances"),
                max_n: cfg.usize("max_n"),
                max_space: cfg.usize("max_space"),
            };
            let mut rep = bkr_campaign(&c, root.derive(tags::BKR))?;
            rep.echo("seed", seed);
            rep
        }
        "bridge-check" => {
            let c = BridgeCheckConfig {
                paths: cfg.int("paths"),
                steps: cfg.usize("steps"),
                tuples: cfg.int("tuples"),
                tuple_paths: cfg.int("tuple_paths"),
            };
            bridge_check(&c, root.derive(tags::BRIDGE))?.report(&c, seed)
        }
        "moment-check" => {
            let c = MomentBatteryConfig {
                trials: cfg.int("trials"),
                nodes: cfg.usize("nodes"),
                ..MomentBatteryConfig::default()
            };
            moment_report(&moment_battery(&c, root.derive(tags::MOMENTS))?, &c, seed)
        }
        "tail" => {
            let c = TailConfig {
                t: cfg.float("t"),
                trials: cfg.int("trials"),
                y_grid: cfg.list("y"),
                fit_lo: cfg.float("fit_lo"),
                fit_hi: cfg.float("fit_hi"),
                min_hits: cfg.int("min_hits"),
                ..TailConfig::default()
            };
            exp_right_tail(&c, root.derive(tags::TAIL))?.report(&c, seed)
        }
        other => return Err(CliError::Usage(format!("unknown subcommand `{other}`"))),
    };
    Ok(rep)
}

impl From<BbmError> for CliError {
    fn from(e: BbmError) -> Self {
        match e {
            BbmError::Domain { .. } | BbmError::Config(_) => CliError::Config(e.to_string()),
            BbmError::ParticleLimit { .. } | BbmError::EnumerationGuard { .. } => CliError::Resource(e.to_string()),
            BbmError::Checkpoint(bbm_core::CheckpointError::Io(_)) => CliError::Io(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
