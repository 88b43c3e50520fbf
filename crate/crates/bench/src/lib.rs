//! Criterion benchmarks for the particle sampler and the exact oracle live in `benches/`.
