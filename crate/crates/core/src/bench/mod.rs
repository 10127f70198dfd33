//! Experiment harness.

pub mod commands;
pub mod config;

pub use commands::*;
pub use config::{hash_text, CampaignConfig, DatasetConfig, RunConfig};
