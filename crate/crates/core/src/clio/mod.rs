//! Operational shell: run configuration, file formats, checkpoints and the
//! subcommands of the `icle` binary.
//!
//! Exit codes: 0 ok, 2 configuration, 3 data, 4 numeric failure.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod files;

pub use checkpoint::Checkpoint;
pub use commands::{run, Cli, Command};
pub use config::{RunConfig, SEED_ENV};
