//! Criterion benchmarks for the lvseg pipeline; see `benches/`.
