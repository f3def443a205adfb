//! Criterion benchmarks for the koopgen pipeline; see `benches/`.
