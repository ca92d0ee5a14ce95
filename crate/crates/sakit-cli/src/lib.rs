//! Config-driven experiment runner for the `sakit` stochastic approximation toolkit.
//!
//! An experiment file names a problem family, a step-size schedule, a sweep of horizons and a
//! number of replicates. [`run_experiment`] runs every replicate at every horizon and writes
//! the trajectories, the mean over replicates with its standard error, the matching
//! theoretical bound and a one-line summary.

// Argument checks are written as `!(x > 0.0)` so that NaN is rejected along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod presets;

pub use config::{parse_config, ExperimentConfig, ParseError};
pub use experiment::{run_experiment, Summary, AGGREGATE_HEADER, BOUND_HEADER, TRAJECTORY_HEADER};

/// Everything that stops an experiment, with the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Parse(#[from] ParseError),
    #[error("config: {0}")]
    Config(String),
    #[error("iterate diverged at step {k}")]
    Divergence { k: usize },
    #[error("{0}")]
    Module(sakit::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<sakit::Error> for CliError {
    fn from(e: sakit::Error) -> Self {
        match e {
            sakit::Error::Divergence { k } => CliError::Divergence { k },
            other => CliError::Module(other),
        }
    }
}

/// Exit code of a run whose configured checks failed.
pub const EXIT_CHECK_FAILED: i32 = 3;

impl CliError {
    /// `2` for a divergent run and `1` for everything else: invalid configurations, violated
    /// hypotheses and i/o failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Divergence { .. } => 2,
            _ => 1,
        }
    }
}
