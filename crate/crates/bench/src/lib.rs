//! Criterion benchmarks for kernelcf; see `benches/`.
