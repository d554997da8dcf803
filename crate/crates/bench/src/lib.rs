//! Sweep harness around `fmux-core`: budget sweeps, Pareto frontiers, the
//! shared-table probe and the numeric self-checks.

pub mod checks;
pub mod config;
pub mod dataset;
pub mod methods;
pub mod pareto;
pub mod probe;
pub mod report;
pub mod sweep;
