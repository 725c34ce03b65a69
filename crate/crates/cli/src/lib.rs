//! Command-line front end of the bridge monitoring pipeline.

pub mod commands;
pub mod e2e;
pub mod exit;
pub mod scenarios;
