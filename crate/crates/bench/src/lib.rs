//! Synthetic two-domain benchmark, experiment runner and result reporting
//! for `adfl-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
pub mod runner;
pub mod synth;

pub use error::{BenchError, Result};
