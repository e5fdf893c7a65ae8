//! Configuration, persistence, experiment drivers and reporting.

pub mod commands;
pub mod config;
pub mod container;
pub mod dataset;
pub mod experiments;
pub mod manifest;
pub mod metrics;
pub mod overhead;
pub mod pipeline;
pub mod plot;
