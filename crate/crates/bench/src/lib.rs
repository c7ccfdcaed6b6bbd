//! Benchmarks only; see `benches/hot_paths.rs`.

pub use drop_core;
