//! Configuration, persistence and report emission for the `mfg` driver.

pub mod config;
pub mod output;
pub mod pipeline;
