//! Experiment runner behind the `formhom` binary.

pub mod config;
pub mod output;
pub mod run;

use std::fmt;

pub use config::{Command, ConfigError, ExperimentConfig, RawConfig};
pub use run::run;

/// Failure of a run, carrying its exit status.
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Solver(formhom::Error),
    Io(String),
}

impl RunError {
    pub fn io(e: impl fmt::Display) -> Self {
        RunError::Io(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver(_) => 3,
            RunError::Io(_) => 4,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "invalid configuration: {m}"),
            RunError::Solver(e) => write!(f, "solver failure: {e}"),
            RunError::Io(m) => write!(f, "i/o failure: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<formhom::Error> for RunError {
    fn from(e: formhom::Error) -> Self {
        if e.is_solver_failure() {
            RunError::Solver(e)
        } else if e.is_io() {
            RunError::Io(e.to_string())
        } else {
            RunError::Config(e.to_string())
        }
    }
}
