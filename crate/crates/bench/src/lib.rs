//! Criterion benchmarks for the forecasting core; see `benches/`.
