//! Criterion benchmarks for `kfls-core`; see `benches/`.
