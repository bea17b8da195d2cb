//! Session service for the bodylink workbench: configuration, the console wire protocol,
//! the live session loop, scripted simulation, log replay and offline analysis.

pub mod analyze;
pub mod config;
pub mod logfiles;
pub mod replay;
pub mod server;
pub mod simulate;
pub mod wire;
