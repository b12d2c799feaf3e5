//! Criterion benchmarks for the regionsep kernels live in `benches/`.
