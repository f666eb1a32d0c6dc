use thiserror::Error;

/// Errors raised by the simulation engine, analytic toolbox and experiment drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BbmError {
    /// An argument fell outside the domain on which an operation is defined.
    #[error("invalid argument `{name}` = {value}: {reason}")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// A configuration is structurally invalid (ordering, empty grids, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The live population exceeded the configured hard limit.
    #[error("particle limit {limit} exceeded at time {time:.6} ({alive} alive)")]
    ParticleLimit { limit: usize, time: f64, alive: usize },

    /// Every particle was removed; usually a sign of over-aggressive pruning.
    #[error("empty population at time {0:.6}")]
    EmptyPopulation(f64),

    #[error("unknown particle {0}")]
    UnknownParticle(String),

    /// A query time lies outside the lifetime of the queried particle.
    #[error("time {time} outside [0, {end}] for particle {id}")]
    TimeOutOfRange { id: String, time: f64, end: f64 },

    /// An exhaustive enumeration would exceed its size guard.
    #[error("enumeration of {size} outcomes exceeds guard {guard}")]
    EnumerationGuard { size: u128, guard: u128 },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Checkpoint decoding failures; each one is distinguishable by callers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint root stream does not match the run configuration")]
    RootMismatch,
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, BbmError>;

pub(crate) fn ensure_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(BbmError::Domain {
            name,
            value,
            reason: "must be finite",
        })
    }
}
