//! Counterfactual dose densities.
//!
//! Every family maps an observed conditional dose density (tabulated on the
//! shared grid) to the intervention density `q(d | x)`. Families that do not
//! depend on the observed density ignore their input curve and only borrow
//! its grid.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{DensityCurve, DoseGrid, GridError};

#[derive(Debug, Error, PartialEq)]
pub enum InterventionError {
    #[error("no grid mass above the minimum dose {0}")]
    NoMassAboveThreshold(f64),
    #[error("invalid intervention parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Data-independent base distributions on (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseDistribution {
    Uniform,
    Beta { alpha: f64, beta: f64 },
    TruncNormal { mean: f64, sd: f64 },
}

impl BaseDistribution {
    pub fn validate(&self) -> Result<(), InterventionError> {
        match *self {
            Self::Uniform => Ok(()),
            Self::Beta { alpha, beta } => {
                if alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0 {
                    Ok(())
                } else {
                    Err(InterventionError::InvalidParameter(format!(
                        "beta shapes must be positive, got ({alpha}, {beta})"
                    )))
                }
            }
            Self::TruncNormal { mean, sd } => {
                if mean.is_finite() && sd.is_finite() && sd > 0.0 {
                    Ok(())
                } else {
                    Err(InterventionError::InvalidParameter(format!(
                        "truncated normal needs finite mean and sd > 0, got ({mean}, {sd})"
                    )))
                }
            }
        }
    }

    /// Unnormalized log density at `d`.
    fn log_kernel(&self, d: f64) -> f64 {
        match *self {
            Self::Uniform => 0.0,
            Self::Beta { alpha, beta } => {
                (alpha - 1.0) * d.ln() + (beta - 1.0) * (1.0 - d).ln()
            }
            Self::TruncNormal { mean, sd } => {
                let z = (d - mean) / sd;
                -0.5 * z * z
            }
        }
    }
}

impl fmt::Display for BaseDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => write!(f, "uniform"),
            Self::Beta { alpha, beta } => write!(f, "beta({alpha},{beta})"),
            Self::TruncNormal { mean, sd } => write!(f, "truncnormal({mean},{sd})"),
        }
    }
}

/// Choice of counterfactual dose density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InterventionSpec {
    /// `q ∝ exp(δ d) π(d | x)`.
    ExponentialTilt { delta: f64 },
    /// `q ∝ exp{-(d - d')² / (2δ²)} π(d | x)`.
    GaussianKernel { delta: f64, center: f64 },
    /// `q ∝ π(d | x) 1(d > d*)`.
    MinimumDose { threshold: f64 },
    /// Truncated normal on (0, 1] with mean `mean + eta`. Data-independent.
    ParametricShift { mean: f64, sd: f64, eta: f64 },
    /// Fixed distribution. Data-independent.
    Parametric { base: BaseDistribution },
}

impl InterventionSpec {
    pub fn tilt(delta: f64) -> Self {
        Self::ExponentialTilt { delta }
    }

    pub fn validate(&self) -> Result<(), InterventionError> {
        let bad = |msg: String| Err(InterventionError::InvalidParameter(msg));
        match *self {
            Self::ExponentialTilt { delta } => {
                if !delta.is_finite() {
                    return bad(format!("tilt delta must be finite, got {delta}"));
                }
            }
            Self::GaussianKernel { delta, center } => {
                if !(delta > 0.0) || delta.is_infinite() {
                    return bad(format!("kernel width must be positive, got {delta}"));
                }
                if !(center > 0.0 && center <= 1.0) {
                    return bad(format!("kernel center must lie in (0, 1], got {center}"));
                }
            }
            Self::MinimumDose { threshold } => {
                if !(0.0..1.0).contains(&threshold) {
                    return bad(format!("minimum dose must lie in [0, 1), got {threshold}"));
                }
            }
            Self::ParametricShift { mean, sd, eta } => {
                if !eta.is_finite() {
                    return bad(format!("shift eta must be finite, got {eta}"));
                }
                BaseDistribution::TruncNormal { mean, sd }.validate()?;
            }
            Self::Parametric { base } => base.validate()?,
        }
        Ok(())
    }

    /// True when `q` is built from the observed dose density.
    pub fn depends_on_data(&self) -> bool {
        matches!(
            self,
            Self::ExponentialTilt { .. } | Self::GaussianKernel { .. } | Self::MinimumDose { .. }
        )
    }

    /// The fixed curve of a data-independent family, `None` otherwise.
    pub fn fixed_curve(&self, grid: &Arc<DoseGrid>) -> Result<Option<DensityCurve>, InterventionError> {
        match *self {
            Self::ParametricShift { mean, sd, eta } => parametric_density(
                &BaseDistribution::TruncNormal { mean: mean + eta, sd },
                grid,
            )
            .map(Some),
            Self::Parametric { base } => parametric_density(&base, grid).map(Some),
            _ => Ok(None),
        }
    }

    /// Apply the intervention to an observed conditional dose density.
    pub fn apply(&self, pi: &DensityCurve) -> Result<DensityCurve, InterventionError> {
        match *self {
            Self::ExponentialTilt { delta } => Ok(tilt_density(pi, delta)),
            Self::GaussianKernel { delta, center } => gaussian_kernel_density(pi, delta, center),
            Self::MinimumDose { threshold } => minimum_dose_density(pi, threshold),
            Self::ParametricShift { .. } | Self::Parametric { .. } => Ok(self
                .fixed_curve(pi.grid())?
                .expect("data-independent family has a fixed curve")),
        }
    }

    /// Main scalar parameter, used to label output rows.
    pub fn label_value(&self) -> Option<f64> {
        match *self {
            Self::ExponentialTilt { delta } | Self::GaussianKernel { delta, .. } => Some(delta),
            Self::MinimumDose { threshold } => Some(threshold),
            Self::ParametricShift { eta, .. } => Some(eta),
            Self::Parametric { .. } => None,
        }
    }
}

/// Multiply `pi` by `exp(log_weight[m])` and renormalize. The log weights are
/// shifted by their maximum first so large exponents cannot overflow.
fn reweight(pi: &DensityCurve, log_weight: impl Fn(f64) -> f64) -> Result<DensityCurve, GridError> {
    let grid = pi.grid();
    let logs: Vec<f64> = grid.points().iter().map(|&d| log_weight(d)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values: Vec<f64> = logs
        .iter()
        .zip(pi.values())
        .map(|(l, p)| (l - top).exp() * p)
        .collect();
    DensityCurve::normalized(grid.clone(), values)
}

/// Exponential tilt `q_δ(d) = exp(δd) π(d) / ∫ exp(δb) π(b) db`.
pub fn tilt_density(pi: &DensityCurve, delta: f64) -> DensityCurve {
    if delta == 0.0 {
        return pi.clone();
    }
    reweight(pi, |d| delta * d).expect("tilt of a normalized density keeps positive mass")
}

/// Gaussian kernel of width `delta` around `center`, weighted by `pi`.
pub fn gaussian_kernel_density(
    pi: &DensityCurve,
    delta: f64,
    center: f64,
) -> Result<DensityCurve, InterventionError> {
    InterventionSpec::GaussianKernel { delta, center }.validate()?;
    let scale = 2.0 * delta * delta;
    Ok(reweight(pi, |d| -(d - center).powi(2) / scale)?)
}

/// Restrict `pi` to doses strictly above `threshold` and renormalize.
pub fn minimum_dose_density(pi: &DensityCurve, threshold: f64) -> Result<DensityCurve, InterventionError> {
    let grid = pi.grid();
    let first = grid
        .first_above(threshold)
        .ok_or(InterventionError::NoMassAboveThreshold(threshold))?;
    let values: Vec<f64> = pi
        .values()
        .iter()
        .enumerate()
        .map(|(m, &p)| if m >= first { p } else { 0.0 })
        .collect();
    DensityCurve::normalized(grid.clone(), values).map_err(|e| match e {
        GridError::ZeroMass => InterventionError::NoMassAboveThreshold(threshold),
        other => other.into(),
    })
}

/// Evaluate a data-independent density on the grid and renormalize.
pub fn parametric_density(
    base: &BaseDistribution,
    grid: &Arc<DoseGrid>,
) -> Result<DensityCurve, InterventionError> {
    base.validate()?;
    let logs: Vec<f64> = grid.points().iter().map(|&d| base.log_kernel(d)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = logs.iter().map(|l| (l - top).exp()).collect();
    Ok(DensityCurve::normalized(grid.clone(), values)?)
}
