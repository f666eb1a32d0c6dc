use bbm_core::checkpoint::{decode, encode, load, save};
use bbm_core::*;

fn pruned_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::event(8.0, RngStreamKey::root(seed));
    cfg.sync_interval = Some(0.1);
    cfg.snapshot_times = vec![2.0, 5.0, 8.0];
    cfg.prune = PruneConfig {
        mode: PruneMode::GapToMax { gap: 3.0 },
        active_after: 2.0,
    };
    cfg
}

fn observer(t_start: f64) -> ErgodicObserver {
    ErgodicObserver {
        acc: ErgodicAccumulator::new(default_x_grid(), t_start).unwrap(),
        horizon: 8.0,
        step: 0.1,
    }
}

fn unbroken(cfg: RunConfig) -> Vec<u8> {
    let mut obs = observer(1.0);
    let mut sim = Simulation::new(cfg).unwrap();
    sim.advance_until(8.0, &mut obs).unwrap();
    encode(&sim, &[obs.acc])
}

#[test]
fn round_trip_is_bit_identical() {
    let cfg = pruned_config(1);
    let mut obs = observer(1.0);
    let mut sim = Simulation::new(cfg.clone()).unwrap();
    sim.advance_until(4.0, &mut obs).unwrap();
    let bytes = encode(&sim, std::slice::from_ref(&obs.acc));
    let (back, accs) = decode(&bytes, cfg).unwrap();
    assert_eq!(accs, vec![obs.acc.clone()]);
    assert_eq!(back.genealogy(), sim.genealogy());
    assert_eq!(back.snapshots(), sim.snapshots());
    assert_eq!(back.time(), sim.time());
    assert_eq!(encode(&back, &accs), bytes);
}

#[test]
fn resume_at_half_equals_unbroken_run() {
    for (seed, cfg) in [
        (2, pruned_config(2)),
        (3, RunConfig::grid(8.0, 0.05, RngStreamKey::root(3))),
    ] {
        let reference = unbroken(cfg.clone());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(format!("run{seed}.bbm"));
        {
            let mut obs = observer(1.0);
            let mut sim = Simulation::new(cfg.clone()).unwrap();
            sim.advance_until(4.0, &mut obs).unwrap();
            save(&path, &sim, &[obs.acc]).unwrap();
        }
        let (mut sim, mut accs) = load(&path, cfg).unwrap();
        let mut obs = ErgodicObserver {
            acc: accs.remove(0),
            horizon: 8.0,
            step: 0.1,
        };
        sim.advance_until(8.0, &mut obs).unwrap();
        assert!(sim.is_finished());
        assert_eq!(encode(&sim, &[obs.acc]), reference, "seed {seed}");
    }
}

#[test]
fn corruption_is_detected() {
    let cfg = pruned_config(4);
    let mut sim = Simulation::new(cfg.clone()).unwrap();
    sim.advance_until(3.0, &mut ()).unwrap();
    let bytes = encode(&sim, &[]);

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(matches!(
        decode(&flipped, cfg.clone()),
        Err(BbmError::Checkpoint(CheckpointError::Checksum { .. }))
    ));

    assert!(matches!(
        decode(&bytes[..bytes.len() - 5], cfg.clone()),
        Err(BbmError::Checkpoint(CheckpointError::Truncated { .. }))
    ));
    assert!(matches!(
        decode(&bytes[..10], cfg.clone()),
        Err(BbmError::Checkpoint(CheckpointError::Truncated { .. }))
    ));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(
        decode(&magic, cfg.clone()),
        Err(BbmError::Checkpoint(CheckpointError::BadMagic(_)))
    ));

    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(
        decode(&version, cfg.clone()),
        Err(BbmError::Checkpoint(CheckpointError::Version { found: 9, expected: 1 }))
    ));

    let other = pruned_config(5);
    assert!(matches!(
        decode(&bytes, other),
        Err(BbmError::Checkpoint(CheckpointError::RootMismatch))
    ));
}

#[test]
fn missing_file_names_the_path() {
    let err = load(std::path::Path::new("/nonexistent/x.bbm"), pruned_config(1))
        .err()
        .unwrap();
    assert!(err.to_string().contains("/nonexistent/x.bbm"), "{err}");
}
