//! Source-localization and MovieLens tasks, metrics, sweep orchestration, and figure tables.

pub mod metrics;
pub mod recsys;
pub mod report;
pub mod runner;
pub mod source_loc;
