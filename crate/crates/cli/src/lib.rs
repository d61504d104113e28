//! Experiment harness: config-file loading and the sweep orchestrator.

pub mod config;
pub mod sweep;
