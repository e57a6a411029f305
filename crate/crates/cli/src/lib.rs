//! Command-line pipeline around `elfis-core`.

pub mod config;
pub mod stages;
