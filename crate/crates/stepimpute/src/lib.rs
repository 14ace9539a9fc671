//! File formats and the `stepimpute` command-line tool.

pub mod checkpoint;
pub mod cli;
pub mod csvio;
pub mod error;
pub mod fs;
pub mod manifest;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
