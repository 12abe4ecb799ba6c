//! Shared fixtures for the criterion benchmarks live in the bench targets.
