//! End-to-end orchestration behind the command-line tool.

pub mod cascade;
pub mod config;
pub mod data;
pub mod norm;
pub mod report;
pub mod train;

pub use config::{RunConfig, StageConfig, HIGH_FPS, LOW_FPS, UPSAMPLE};
