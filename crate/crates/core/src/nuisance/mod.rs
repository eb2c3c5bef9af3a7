//! Nuisance functions: the dose-specific outcome regression among the
//! treated, the outcome regression among the untreated, the binary treatment
//! propensity, and the conditional dose density among the treated.
//!
//! Fits only ever see the rows they are handed. Cross-fitting passes a
//! training copy of the data ([`PanelDataset::select`]), so evaluation-fold
//! rows are out of reach by construction.

pub mod density;
pub mod learners;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::data::PanelDataset;
use crate::grid::{DensityCurve, DoseGrid, GridError};

pub use density::{fit_dose_density, Bandwidth, KernelDensityRegression, DENSITY_FLOOR};
pub use learners::{Features, FitFlags, Fitted, Learner, LearnerSpec, LinearModel, Predictor};

/// Clamp applied to every binary propensity used in estimation.
pub const PROPENSITY_BOUNDS: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Error, PartialEq)]
pub enum NuisanceError {
    #[error("need at least {needed} rows to fit, got {got}")]
    InsufficientRows { needed: usize, got: usize },
    #[error("row {row} is not a {expected} unit")]
    WrongStratum { row: usize, expected: &'static str },
    #[error("training rows must include both treated and untreated units")]
    MissingStratum,
    #[error("bandwidth must be positive, got {0}")]
    BandwidthNonPositive(f64),
    #[error("invalid targets: {0}")]
    InvalidTargets(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// `μ(d, x)`, the mean outcome change at dose `d` among treated units.
pub trait DoseResponse: Send + Sync {
    fn value(&self, dose: f64, x: &[f64]) -> f64;

    /// Values at every grid dose.
    fn on_grid(&self, grid: &DoseGrid, x: &[f64]) -> Vec<f64> {
        grid.points().iter().map(|&d| self.value(d, x)).collect()
    }
}

/// A function of the covariates alone.
pub trait CovariateFunction: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl<F> DoseResponse for F
where
    F: Fn(f64, &[f64]) -> f64 + Send + Sync,
{
    fn value(&self, dose: f64, x: &[f64]) -> f64 {
        self(dose, x)
    }
}

impl<F> CovariateFunction for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// A conditional density evaluated on the grid, with the number of grid
/// points that had to be raised to the floor.
#[derive(Debug, Clone)]
pub struct DensityEval {
    pub curve: DensityCurve,
    pub floored: usize,
}

/// `π(· | x)` on the shared grid, normalized.
pub trait ConditionalDensity: Send + Sync {
    fn density(&self, x: &[f64]) -> DensityEval;
}

/// Dose terms entering the treated outcome regression.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DoseBasis {
    #[default]
    Linear,
    Quadratic,
}

impl DoseBasis {
    fn terms(self) -> usize {
        match self {
            Self::Linear => 1,
            Self::Quadratic => 2,
        }
    }

    fn fill(self, dose: f64, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(dose);
        if self == Self::Quadratic {
            out.push(dose * dose);
        }
        out.extend_from_slice(x);
    }
}

impl fmt::Display for DoseBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Quadratic => "quadratic",
        })
    }
}

/// Treated outcome regression over features `[d, (d²), x]`.
#[derive(Debug, Clone)]
pub struct DoseRegression {
    predictor: Arc<dyn Predictor>,
    basis: DoseBasis,
}

impl DoseResponse for DoseRegression {
    fn value(&self, dose: f64, x: &[f64]) -> f64 {
        let mut row = Vec::with_capacity(x.len() + 2);
        self.basis.fill(dose, x, &mut row);
        self.predictor.predict(&row)
    }

    fn on_grid(&self, grid: &DoseGrid, x: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(x.len() + 2);
        grid.points()
            .iter()
            .map(|&d| {
                self.basis.fill(d, x, &mut row);
                self.predictor.predict(&row)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CovariateRegression {
    predictor: Arc<dyn Predictor>,
}

impl CovariateFunction for CovariateRegression {
    fn value(&self, x: &[f64]) -> f64 {
        self.predictor.predict(x)
    }
}

/// Binary propensity clamped to [`PROPENSITY_BOUNDS`].
#[derive(Debug, Clone)]
pub struct ClampedPropensity {
    predictor: Arc<dyn Predictor>,
}

impl CovariateFunction for ClampedPropensity {
    fn value(&self, x: &[f64]) -> f64 {
        self.predictor.predict(x).clamp(PROPENSITY_BOUNDS.0, PROPENSITY_BOUNDS.1)
    }
}

fn covariate_features(data: &PanelDataset, rows: &[usize]) -> Features {
    let p = data.n_covariates();
    if p == 0 {
        return Features::empty(rows.len());
    }
    let mut values = Vec::with_capacity(rows.len() * p);
    for &i in rows {
        values.extend_from_slice(data.covariates(i));
    }
    Features::new(values, p)
}

fn check_stratum(data: &PanelDataset, rows: &[usize], treated: bool) -> Result<(), NuisanceError> {
    match rows.iter().find(|&&i| data.is_treated(i) != treated) {
        Some(&row) => Err(NuisanceError::WrongStratum {
            row,
            expected: if treated { "treated" } else { "untreated" },
        }),
        None => Ok(()),
    }
}

/// Regress the outcome change on `[d, (d²), x]` among the treated `rows`.
pub fn fit_outcome_treated(
    data: &PanelDataset,
    rows: &[usize],
    learner: &dyn Learner,
    basis: DoseBasis,
) -> Result<(DoseRegression, FitFlags), NuisanceError> {
    check_stratum(data, rows, true)?;
    let ncols = data.n_covariates() + basis.terms();
    if rows.len() < ncols + 1 {
        return Err(NuisanceError::InsufficientRows {
            needed: ncols + 1,
            got: rows.len(),
        });
    }
    let mut values = Vec::with_capacity(rows.len() * ncols);
    let mut row = Vec::with_capacity(ncols);
    for &i in rows {
        basis.fill(data.treatment()[i], data.covariates(i), &mut row);
        values.extend_from_slice(&row);
    }
    let targets: Vec<f64> = rows.iter().map(|&i| data.dy()[i]).collect();
    let fitted = learner.fit(&Features::new(values, ncols), &targets)?;
    Ok((
        DoseRegression {
            predictor: fitted.predictor,
            basis,
        },
        fitted.flags,
    ))
}

/// Regress the outcome change on `x` among the untreated `rows`.
pub fn fit_outcome_untreated(
    data: &PanelDataset,
    rows: &[usize],
    learner: &dyn Learner,
) -> Result<(CovariateRegression, FitFlags), NuisanceError> {
    check_stratum(data, rows, false)?;
    let targets: Vec<f64> = rows.iter().map(|&i| data.dy()[i]).collect();
    let fitted = learner.fit(&covariate_features(data, rows), &targets)?;
    Ok((
        CovariateRegression {
            predictor: fitted.predictor,
        },
        fitted.flags,
    ))
}

/// Regress the treated indicator on `x`; predictions are clamped.
pub fn fit_binary_propensity(
    data: &PanelDataset,
    rows: &[usize],
    learner: &dyn Learner,
) -> Result<(ClampedPropensity, FitFlags), NuisanceError> {
    let treated = rows.iter().filter(|&&i| data.is_treated(i)).count();
    if treated == 0 || treated == rows.len() {
        return Err(NuisanceError::MissingStratum);
    }
    let targets: Vec<f64> = rows
        .iter()
        .map(|&i| if data.is_treated(i) { 1.0 } else { 0.0 })
        .collect();
    let fitted = learner.fit(&covariate_features(data, rows), &targets)?;
    Ok((
        ClampedPropensity {
            predictor: fitted.predictor,
        },
        fitted.flags,
    ))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub singular_fallbacks: usize,
    pub non_convergence: usize,
    pub bandwidth: Option<f64>,
}

impl FitDiagnostics {
    fn record(&mut self, flags: FitFlags) {
        self.singular_fallbacks += flags.singular_fallback as usize;
        self.non_convergence += flags.non_convergence as usize;
    }
}

/// The four fitted nuisance functions on a shared grid.
#[derive(Clone)]
pub struct NuisanceFit {
    pub grid: Arc<DoseGrid>,
    pub outcome_treated: Arc<dyn DoseResponse>,
    pub outcome_untreated: Arc<dyn CovariateFunction>,
    pub propensity: Arc<dyn CovariateFunction>,
    pub dose_density: Arc<dyn ConditionalDensity>,
    pub diagnostics: FitDiagnostics,
}

impl fmt::Debug for NuisanceFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NuisanceFit")
            .field("grid_size", &self.grid.len())
            .field("diagnostics", &self.diagnostics)
            .finish_non_exhaustive()
    }
}

impl NuisanceFit {
    /// Clamped propensity and whether the clamp was active.
    pub fn clamped_propensity(&self, x: &[f64]) -> (f64, bool) {
        let raw = self.propensity.value(x);
        let clamped = raw.clamp(PROPENSITY_BOUNDS.0, PROPENSITY_BOUNDS.1);
        (clamped, clamped != raw)
    }
}

/// Produces nuisance fits from a training sample.
pub trait NuisanceFitter: Sync {
    fn fit(&self, train: &PanelDataset, grid: &Arc<DoseGrid>) -> Result<NuisanceFit, NuisanceError>;
}

/// Built-in learner configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LearnerSet {
    pub outcome: LearnerSpec,
    pub propensity: LearnerSpec,
    pub dose_basis: DoseBasis,
    pub bandwidth: Bandwidth,
}

impl Default for LearnerSet {
    fn default() -> Self {
        Self {
            outcome: LearnerSpec::Ols,
            propensity: LearnerSpec::Logistic,
            dose_basis: DoseBasis::Linear,
            bandwidth: Bandwidth::Auto,
        }
    }
}

impl NuisanceFitter for LearnerSet {
    fn fit(&self, train: &PanelDataset, grid: &Arc<DoseGrid>) -> Result<NuisanceFit, NuisanceError> {
        let treated = train.treated_rows();
        let untreated = train.untreated_rows();
        let all: Vec<usize> = (0..train.len()).collect();
        let mut diagnostics = FitDiagnostics::default();

        let (mu, flags) = fit_outcome_treated(train, &treated, &self.outcome, self.dose_basis)?;
        diagnostics.record(flags);
        let (mu0, flags) = fit_outcome_untreated(train, &untreated, &self.outcome)?;
        diagnostics.record(flags);
        let (pi, flags) = fit_binary_propensity(train, &all, &self.propensity)?;
        diagnostics.record(flags);
        let density = fit_dose_density(train, &treated, grid, self.bandwidth)?;
        diagnostics.record(FitFlags {
            singular_fallback: density.singular_fallback(),
            non_convergence: false,
        });
        diagnostics.bandwidth = Some(density.bandwidth());

        Ok(NuisanceFit {
            grid: grid.clone(),
            outcome_treated: Arc::new(mu),
            outcome_untreated: Arc::new(mu0),
            propensity: Arc::new(pi),
            dose_density: Arc::new(density),
            diagnostics,
        })
    }
}
