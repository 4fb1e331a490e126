//! Criterion benchmarks for the core pipeline; see `benches/`.
