//! Configuration and report types of the `blisslab` binary.

pub mod config;
pub mod report;
