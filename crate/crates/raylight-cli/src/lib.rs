//! Configuration-driven driver for the raylight toolkit: phantoms, the
//! experiment commands and their artifacts.

pub mod config;
pub mod phantom;
pub mod run;

pub use config::ExperimentConfig;
pub use run::{run_pipeline, Command, RunOptions, RunSummary};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: raylight::Error,
    },
    #[error("output: {0}")]
    Output(String),
    #[error("threshold not met: {0}")]
    Threshold(String),
}

impl CliError {
    /// 2 config error, 3 solver failure, 4 acceptance-threshold failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { source, .. } => {
                if source.is_solver_failure() {
                    3
                } else {
                    match root(source) {
                        raylight::Error::Io(_) | raylight::Error::MemoryBudgetExceeded { .. } => 3,
                        _ => 2,
                    }
                }
            }
            CliError::Output(_) => 3,
            CliError::Threshold(_) => 4,
        }
    }
}

fn root(e: &raylight::Error) -> &raylight::Error {
    match e {
        raylight::Error::Stage { source, .. } => root(source),
        other => other,
    }
}

/// Tags a library error with the stage that raised it.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for raylight::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}
