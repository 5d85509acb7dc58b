//! Experiment runner: configuration parsing, the verification battery and
//! deterministic export.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod export;
