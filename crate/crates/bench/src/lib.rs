//! Criterion benchmarks for the rmmimo kernels; see `benches/`.
