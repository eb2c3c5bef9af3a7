//! Plug-in and cross-fitted one-step estimators of the average stochastic
//! dose effect among the treated, with influence-function variance.

mod marginal;
mod onestep;
mod plugin;
mod variance;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::data::DataError;
use crate::grid::{DensityCurve, GridError, DEFAULT_GRID_SIZE};
use crate::interventions::{InterventionError, InterventionSpec};
use crate::nuisance::NuisanceError;

pub use marginal::onestep_upt;
pub use onestep::{
    crossfit, onestep_crossfit, onestep_fold, onestep_fold_many, onestep_parametric, FoldOutput, OneStepTarget,
};
pub use plugin::{plugin_cpt, plugin_estimate, plugin_upt, PluginEstimate};
pub use variance::{normal_quantile, variance_plugin, VarianceEstimate};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("no untreated units available")]
    NoUntreatedUnits,
    #[error("no treated units available")]
    NoTreatedUnits,
    #[error("unit {row}: observed dose {dose} lies outside (0, 1]")]
    DoseOutsideGrid { row: usize, dose: f64 },
    #[error("{0} has no influence-function estimator; use the plug-in path")]
    UnsupportedInterventionForOneStep(String),
    #[error("curve length {got} does not match grid size {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidCiLevel(f64),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<EstimatorError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Weight on the untreated residuals in the trend-correction term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionWeight {
    /// `π / (1 - π)`: the orientation under which the correction is doubly
    /// robust in the untreated outcome regression.
    #[default]
    Odds,
    /// `(1 - π) / π`, kept for comparison.
    InverseOdds,
}

impl CorrectionWeight {
    pub fn weight(self, propensity: f64) -> f64 {
        match self {
            Self::Odds => propensity / (1.0 - propensity),
            Self::InverseOdds => (1.0 - propensity) / propensity,
        }
    }
}

impl fmt::Display for CorrectionWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Odds => "odds",
            Self::InverseOdds => "inverse_odds",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorOptions {
    pub grid_size: usize,
    pub ci_level: f64,
    pub weight: CorrectionWeight,
    pub retain_eif: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID_SIZE,
            ci_level: 0.95,
            weight: CorrectionWeight::Odds,
            retain_eif: false,
        }
    }
}

impl EstimatorOptions {
    pub(crate) fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(EstimatorError::InvalidCiLevel(self.ci_level));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldEstimate {
    pub fold: usize,
    pub psi_hat: f64,
    pub size: usize,
    pub p_hat: f64,
    pub plugin: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EstimateDiagnostics {
    /// Units whose binary propensity hit the clamp.
    pub propensity_clamped: usize,
    /// Treated units whose fitted dose density touched the floor.
    pub density_floored: usize,
    pub singular_fallbacks: usize,
    pub non_convergence: usize,
}

impl EstimateDiagnostics {
    pub(crate) fn add(&mut self, other: &Self) {
        self.propensity_clamped += other.propensity_clamped;
        self.density_floored += other.density_floored;
        self.singular_fallbacks += other.singular_fallbacks;
        self.non_convergence += other.non_convergence;
    }
}

/// Cross-fitted one-step estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub intervention: Option<InterventionSpec>,
    pub psi_hat: f64,
    pub se: f64,
    pub sigma2: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_level: f64,
    /// Treated-outcome component.
    pub psi1_hat: f64,
    /// Untreated-trend component.
    pub psi2_hat: f64,
    /// Fold-weighted plug-in estimate from the same nuisance fits.
    pub plugin: f64,
    pub n: usize,
    pub per_fold: Vec<FoldEstimate>,
    /// Centered per-unit influence values, in unit order, when retained.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eif_values: Option<Vec<f64>>,
    pub diagnostics: EstimateDiagnostics,
}

impl EstimateResult {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

pub(crate) fn check_curve(q: &DensityCurve, size: usize) -> Result<(), EstimatorError> {
    if q.values().len() != size {
        return Err(EstimatorError::GridMismatch {
            expected: size,
            got: q.values().len(),
        });
    }
    Ok(())
}
