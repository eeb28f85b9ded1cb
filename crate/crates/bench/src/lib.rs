//! Benchmarks for the search crate live in `benches/`.
