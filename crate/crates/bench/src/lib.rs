//! Criterion benchmarks for the fairlens kernels; see `benches/`.
