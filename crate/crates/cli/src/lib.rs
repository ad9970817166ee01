//! Library surface of the CLI: command implementations and configuration,
//! shared by the `aifield` binary and the acceptance suite.

pub mod commands;
pub mod config;
