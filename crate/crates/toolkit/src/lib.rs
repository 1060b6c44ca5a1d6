//! Std companion to `nmd-core`: binary artifact formats, dataset loaders,
//! CSV reports, the latency benchmark and the `nmd` command line.

pub mod artifacts;
pub mod bench;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod envelope;
pub mod error;
pub mod reports;

pub use error::{Error, Result};
