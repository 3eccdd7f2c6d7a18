//! Command-line front end: single runs, the maze benchmark and plotting.

pub mod commands;
pub mod overrides;
pub mod plot;
pub mod report;
