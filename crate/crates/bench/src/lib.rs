//! Criterion benchmarks for the engine, observables and random streams; see `benches/`.
