//! Criterion benchmarks for `qct-core`; see `benches/pipeline.rs`.
