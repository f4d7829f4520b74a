//! Criterion benchmarks for `fairway-core`; see `benches/`.
