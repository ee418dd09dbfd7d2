//! Command-line interface and HTTP service over `shield-core`.

pub mod api;
pub mod cli;
pub mod config;
