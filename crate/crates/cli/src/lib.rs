//! Subcommand implementations and file formats of the `beattrio` binary.

pub mod commands;
pub mod files;
