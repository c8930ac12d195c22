//! Criterion benchmarks for `shiftlab` live under `benches/`.
