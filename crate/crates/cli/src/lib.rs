//! Configuration-driven runs of stable neural flows: training, gradient
//! checks, and CSV dumps of energy surfaces and depth trajectories.

pub mod commands;
pub mod config;
pub mod snapshot;
