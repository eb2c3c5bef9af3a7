//! Difference-in-differences with a continuous dose and an untreated mass
//! point: stochastic dose interventions, cross-fitted one-step estimation,
//! and a simulation harness.

pub mod cli;
pub mod data;
pub mod estimators;
pub mod grid;
pub mod interventions;
pub mod nuisance;
pub mod rng;
pub mod simulation;

use thiserror::Error;

/// Any error surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Grid(#[from] grid::GridError),
    #[error(transparent)]
    Intervention(#[from] interventions::InterventionError),
    #[error(transparent)]
    Nuisance(#[from] nuisance::NuisanceError),
    #[error(transparent)]
    Estimator(#[from] estimators::EstimatorError),
    #[error(transparent)]
    Simulation(#[from] simulation::SimulationError),
}
