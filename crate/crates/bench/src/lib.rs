//! Criterion benchmarks for the Hawkes toolkit live under `benches/`.
