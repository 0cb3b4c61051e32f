//! Experiment runner for bin-and-delta pose estimation: configuration,
//! the subcommands and the self-test property suite.

pub mod config;
pub mod runner;
pub mod selftest;

use bindelta::models::EpochRecord;
use bindelta::models::PoseModel;
use thiserror::Error;

pub use config::{DataSource, ExperimentConfig, RunManifest, OUT_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_SELFTEST: i32 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] bindelta::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("category {category}: training diverged at epoch {epoch}: {reason}")]
    Diverged {
        category: u32,
        epoch: usize,
        reason: String,
        last_good: Option<Box<PoseModel>>,
        history: Vec<EpochRecord>,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}
