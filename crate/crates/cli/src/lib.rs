//! Command implementations behind the `monoenv` binary.

pub mod bench;
pub mod commands;
pub mod config;
