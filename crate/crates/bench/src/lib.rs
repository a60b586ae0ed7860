//! Criterion benchmarks for `mpq-core`; see `benches/`.
