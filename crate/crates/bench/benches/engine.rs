use std::hint::black_box;

use bbm_core::stochastic::philox4x32_10;
use bbm_core::{extremal_pair_split_scan, run, PruneConfig, PruneMode, RngStreamKey, RunConfig};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng;

fn engine(c: &mut Criterion) {
    let mut g = c.benchmark_group("engine");
    g.sample_size(20);
    let mut seed = 0u64;
    g.bench_function("event_t8_unpruned", |b| {
        b.iter(|| {
            seed += 1;
            let mut cfg = RunConfig::event(8.0, RngStreamKey::root(seed));
            cfg.record_genealogy = false;
            black_box(run(cfg, &mut ()).unwrap().stats)
        })
    });
    g.bench_function("event_t8_genealogy", |b| {
        b.iter(|| {
            seed += 1;
            black_box(
                run(RunConfig::event(8.0, RngStreamKey::root(seed)), &mut ())
                    .unwrap()
                    .stats,
            )
        })
    });
    g.bench_function("grid_t5_dt001", |b| {
        b.iter(|| {
            seed += 1;
            black_box(
                run(RunConfig::grid(5.0, 0.01, RngStreamKey::root(seed)), &mut ())
                    .unwrap()
                    .stats,
            )
        })
    });
    g.bench_function("pruned_gap8_t20", |b| {
        b.iter(|| {
            seed += 1;
            let mut cfg = RunConfig::event(20.0, RngStreamKey::root(seed));
            cfg.record_genealogy = false;
            cfg.sync_interval = Some(0.1);
            cfg.prune = PruneConfig {
                mode: PruneMode::GapToMax { gap: 8.0 },
                active_after: 5.0,
            };
            black_box(run(cfg, &mut ()).unwrap().stats)
        })
    });
    g.finish();
}

fn split_scan(c: &mut Criterion) {
    let mut g = c.benchmark_group("observables");
    g.bench_function("split_scan_s6_t10", |b| {
        b.iter_batched(
            || {
                let mut cfg = RunConfig::event(10.0, RngStreamKey::root(3));
                cfg.snapshot_times = vec![6.0, 10.0];
                run(cfg, &mut ()).unwrap()
            },
            |out| {
                black_box(extremal_pair_split_scan(&out.genealogy, &out.snapshots[0], &out.snapshots[1], -2.0).unwrap())
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn philox(c: &mut Criterion) {
    let mut g = c.benchmark_group("philox");
    g.bench_function("block", |b| {
        let mut ctr = [0u32; 4];
        b.iter(|| {
            ctr[0] = ctr[0].wrapping_add(1);
            black_box(philox4x32_10(black_box(ctr), [0xdead_beef, 0x1234_5678]))
        })
    });
    g.bench_function("stream_1k_f64", |b| {
        let mut rng = RngStreamKey::root(1).rng();
        b.iter(|| {
            let mut acc = 0.0;
            for _ in 0..1000 {
                acc += rng.random::<f64>();
            }
            black_box(acc)
        })
    });
    g.bench_function("derive_chain", |b| {
        b.iter(|| black_box(RngStreamKey::root(black_box(9)).derive(2).derive(3).derive(4)))
    });
    g.finish();
}

criterion_group!(benches, engine, split_scan, philox);
criterion_main!(benches);
