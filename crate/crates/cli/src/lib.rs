//! Command implementations behind the `isp` binary: demo generation,
//! training, evaluation, and the certification battery. Everything is a
//! library function so tests can drive the commands in process.

pub mod config;
pub mod demos;
pub mod evaluate;
pub mod trainer;
pub mod verify_cmd;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Policy(#[from] isp_core::diffusion::PolicyError),
    #[error(transparent)]
    Schedule(#[from] isp_core::diffusion::ScheduleError),
    #[error(transparent)]
    Action(#[from] isp_core::diffusion::ActionError),
    #[error(transparent)]
    Env(#[from] isp_core::env::EnvError),
    #[error(transparent)]
    Format(#[from] isp_core::io::IoError),
    #[error("dataset is empty; generate demos first")]
    EmptyDataset,
    #[error("checkpoint was produced under config hash {found}, expected {expected}")]
    HashMismatch { expected: String, found: String },
}
