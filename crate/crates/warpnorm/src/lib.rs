//! File formats, run configuration, a thread executor and the experiment
//! commands built on `warpnorm-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod image;
pub mod manifest;
pub mod metrics;

pub use error::{CliError, Result};
pub use exec::Threads;
