//! Criterion benchmarks for the signal-processing and training hot paths; see `benches/`.
