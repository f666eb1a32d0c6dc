//! Experiment drivers. Each turns a statement about the front or the
//! genealogy into a statistical or exact test and returns an
//! [`ExperimentReport`]. Trials run in parallel with per-trial streams and are
//! assembled in trial order, so reports do not depend on the thread count.

pub mod bkr;
pub mod decorrelation;
pub mod early;
pub mod ergodic;
pub mod localization;
pub mod oracles;
pub mod report;
pub mod subsequence;
pub mod tail;

pub use report::{Cell, ExperimentReport, Table, Verdict};

use rayon::prelude::*;

use crate::error::Result;
use crate::stochastic::RngStreamKey;

/// Stream tags separating the experiments that share a root seed.
pub mod tags {
    pub const TAIL: u64 = 1;
    pub const EARLY: u64 = 2;
    pub const LOCALIZATION: u64 = 3;
    pub const DECORRELATION: u64 = 4;
    pub const ERGODIC: u64 = 5;
    pub const BKR: u64 = 6;
    pub const BRIDGE: u64 = 7;
    pub const MOMENTS: u64 = 8;
    pub const SUBSEQUENCE: u64 = 9;
    pub const SIMULATE: u64 = 10;
}

/// Runs `f` on trials `0..n` with streams `stream.derive(i)`, in trial order.
pub(crate) fn par_trials<T, F>(n: u64, stream: RngStreamKey, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, RngStreamKey) -> Result<T> + Sync,
{
    (0..n).into_par_iter().map(|i| f(i, stream.derive(i))).collect()
}

/// Whether `p[k + 1] <= p[k] + z * sqrt(se[k]^2 + se[k + 1]^2)` for all `k`.
pub(crate) fn nonincreasing_within(p: &[f64], se: &[f64], z: f64) -> bool {
    p.windows(2)
        .zip(se.windows(2))
        .all(|(w, s)| w[1] <= w[0] + z * (s[0].powi(2) + s[1].powi(2)).sqrt())
}

pub(crate) fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}
