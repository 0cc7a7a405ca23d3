//! Benchmarks for the `esfem` kernels; see `benches/kernels.rs`.
