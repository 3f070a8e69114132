//! Criterion benchmarks for fp-audit; see `benches/`.
