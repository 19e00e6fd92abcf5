//! Experiment harness: configuration, seeding, orchestration and output for
//! the `biasbench` command.

pub mod cli;
pub mod error;
pub mod manifest;
pub mod sweep;

pub use error::{HarnessError, Result};
