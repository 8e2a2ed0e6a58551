//! Command-line driver: ingest edge files, split, train, evaluate, run
//! ablations and complexity benchmarks.

pub mod bundle;
pub mod cli;
pub mod commands;
pub mod config;

pub use cli::{run, Cli};
