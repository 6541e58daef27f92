//! Criterion benchmarks for the desktwin pipeline; see `benches/`.
