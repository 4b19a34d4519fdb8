//! Criterion benchmarks for verimech live in `benches/`.
