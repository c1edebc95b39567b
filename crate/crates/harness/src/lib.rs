//! Experiment orchestration on top of `fastgan-core`: TOML configs, seeded runs with
//! atomic artifact directories, run comparisons and single-key sweeps.

pub mod artifacts;
pub mod compare;
pub mod config;
pub mod run;
pub mod sweep;

use fastgan_core::autodiff::AutodiffError;
use fastgan_core::games::GameError;
use fastgan_core::metrics::MetricsError;
use fastgan_core::trainers::TrainerError;
use thiserror::Error;

pub use artifacts::{load_run, read_params, write_params, LoadedRun, Summary};
pub use compare::{compare_runs, iterations_to_threshold, Comparison, RunView};
pub use config::{ablation_suite, parse_config, ConfigError, ExperimentConfig, GameKind, TrainerRule};
pub use run::{execute, run_experiment, RunOutcome};
pub use sweep::sweep;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("cannot compare: {0}")]
    Compare(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::Trainer(TrainerError::Diverged { .. }) => EXIT_DIVERGED,
            _ => EXIT_FAILURE,
        }
    }
}
