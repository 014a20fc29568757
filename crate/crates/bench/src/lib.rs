//! Criterion benchmarks for the cdis kernels; see `benches/`.
