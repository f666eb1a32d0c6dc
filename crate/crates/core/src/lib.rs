//! Branching Brownian motion with genealogy tracking, Brownian-bridge closed
//! forms and statistical experiments on the extremal front.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod checkpoint;
pub mod engine;
pub mod error;
pub mod genealogy;
pub mod lab;
pub mod observables;
pub mod stochastic;

pub use engine::{
    apply_pruning, run, Observer, PopulationSnapshot, PruneConfig, PruneMode, RunConfig, RunMode, RunOutput, RunStats,
    Seed, Simulation, SnapshotEntry,
};
pub use error::{BbmError, CheckpointError, Result};
pub use genealogy::{EndKind, Genealogy, GenealogyNode, NodeIdx, ParticleId, PathSampler};
pub use observables::{
    default_x_grid, derivative_martingale, extremal_pair_split_scan, extremal_pair_split_scan_with, extremal_set,
    localization_check, max_offset, ErgodicAccumulator, ErgodicObserver, LocalizationSummary, MaxOffset,
};
pub use stochastic::{centering, normal_cdf, RngStreamKey};
