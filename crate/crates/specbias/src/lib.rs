//! Command-line driver, configuration files and result formats for
//! `specbias-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod output;
pub mod trace;
