//! Benchmark data-generating processes, oracle ground truth, and
//! repeated-sampling studies.

mod dgp;
mod oracle;
mod study;

use thiserror::Error;

use crate::data::DataError;
use crate::estimators::EstimatorError;
use crate::grid::GridError;
use crate::interventions::InterventionError;

pub use dgp::{
    beta_log_density, simulate_scenario, simulate_with_rng, DgpParameters, Scenario, ScenarioSpec, DOSE_SLOPE,
    MIN_SAMPLE_SIZE, N_COVARIATES,
};
pub use oracle::{
    beta_on_grid, oracle_truth, tilted_beta_mean, OracleFitter, OracleTruth, MIN_ORACLE_DRAWS, ORACLE_GRID_SIZE,
};
pub use study::{run_study, ReplicateRecord, StudyConfig, StudyNuisance, StudyResult, StudyRow, MIN_REPLICATES};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("unknown scenario {0}; expected 1 or 2")]
    UnknownScenario(u8),
    #[error("sample size must be at least {MIN_SAMPLE_SIZE}, got {0}")]
    SampleTooSmall(usize),
    #[error("need at least {MIN_REPLICATES} replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("oracle needs at least {MIN_ORACLE_DRAWS} draws, got {0}")]
    TooFewOracleDraws(usize),
    #[error("increment grid is empty")]
    EmptyDeltaGrid,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
