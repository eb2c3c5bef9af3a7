//! Conditional dose density by kernel-transformed regression.
//!
//! For each grid dose `d_m` the pseudo-outcome `b⁻¹ K((D_i - d_m) / b)` with a
//! Gaussian `K` is regressed on the covariates by least squares. All grid
//! points share one design, so a single factorization serves every column.
//! Predictions are floored at [`DENSITY_FLOOR`] and renormalized on the grid;
//! the renormalization doubles as the boundary correction on (0, 1].

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use super::learners::{sample_sd, solve_normal_equations};
use super::{ConditionalDensity, DensityEval, NuisanceError};
use crate::data::PanelDataset;
use crate::grid::{DensityCurve, DoseGrid};

/// Lower bound on any fitted density value.
pub const DENSITY_FLOOR: f64 = 1e-3;

pub const AUTO_BANDWIDTH_MIN: f64 = 0.02;
pub const AUTO_BANDWIDTH_MAX: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

impl Bandwidth {
    /// Rule of thumb `1.06 · sd(D) · n^{-1/5}`, clipped to
    /// `[AUTO_BANDWIDTH_MIN, AUTO_BANDWIDTH_MAX]`.
    pub fn resolve(self, doses: &[f64]) -> Result<f64, NuisanceError> {
        match self {
            Self::Fixed(b) if b > 0.0 && b.is_finite() => Ok(b),
            Self::Fixed(b) => Err(NuisanceError::BandwidthNonPositive(b)),
            Self::Auto => {
                let n = doses.len() as f64;
                let rule = 1.06 * sample_sd(doses) * n.powf(-0.2);
                let rule = if rule.is_finite() { rule } else { AUTO_BANDWIDTH_MIN };
                Ok(rule.clamp(AUTO_BANDWIDTH_MIN, AUTO_BANDWIDTH_MAX))
            }
        }
    }
}

pub(crate) fn gaussian_kernel(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Floor at `floor` and rescale to unit grid mass until both hold. Each pass
/// shrinks the excess mass introduced by flooring, so a handful suffice.
pub(crate) fn floor_and_normalize(grid: &DoseGrid, values: &mut [f64], floor: f64) {
    let positive = grid.integrate(&values.iter().map(|v| v.max(0.0)).collect::<Vec<_>>());
    if !(positive > 0.0) {
        values.iter_mut().for_each(|v| *v = 1.0);
    }
    for _ in 0..200 {
        values.iter_mut().for_each(|v| *v = v.max(floor));
        let mass = grid.integrate(values);
        if (mass - 1.0).abs() <= 1e-12 {
            return;
        }
        values.iter_mut().for_each(|v| *v /= mass);
    }
    values.iter_mut().for_each(|v| *v = v.max(floor));
}

#[derive(Debug, Clone)]
pub struct KernelDensityRegression {
    grid: Arc<DoseGrid>,
    /// `M × (p + 1)` row-major: one coefficient row per grid point.
    coefficients: Vec<f64>,
    n_covariates: usize,
    bandwidth: f64,
    singular: bool,
}

impl KernelDensityRegression {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn singular_fallback(&self) -> bool {
        self.singular
    }

    /// Unfloored regression output at every grid point.
    pub fn raw(&self, x: &[f64]) -> Vec<f64> {
        let k = self.n_covariates + 1;
        self.coefficients
            .chunks_exact(k)
            .map(|beta| beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
            .collect()
    }
}

impl ConditionalDensity for KernelDensityRegression {
    fn density(&self, x: &[f64]) -> DensityEval {
        let mut values = self.raw(x);
        let floored = values.iter().filter(|&&v| v < DENSITY_FLOOR).count();
        floor_and_normalize(&self.grid, &mut values, DENSITY_FLOOR);
        DensityEval {
            curve: DensityCurve::from_normalized_unchecked(self.grid.clone(), values),
            floored,
        }
    }
}

/// Fit `π(d | x)` on the treated rows listed in `rows`.
pub fn fit_dose_density(
    data: &PanelDataset,
    rows: &[usize],
    grid: &Arc<DoseGrid>,
    bandwidth: Bandwidth,
) -> Result<KernelDensityRegression, NuisanceError> {
    if let Some(&bad) = rows.iter().find(|&&i| !data.is_treated(i)) {
        return Err(NuisanceError::WrongStratum { row: bad, expected: "treated" });
    }
    let p = data.n_covariates();
    if rows.len() < p + 2 {
        return Err(NuisanceError::InsufficientRows {
            needed: p + 2,
            got: rows.len(),
        });
    }
    let doses: Vec<f64> = rows.iter().map(|&i| data.treatment()[i]).collect();
    let b = bandwidth.resolve(&doses)?;

    let n = rows.len();
    let design = DMatrix::from_fn(n, p + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            data.covariates(rows[r])[c - 1]
        }
    });
    let points = grid.points();
    let pseudo = DMatrix::from_fn(n, points.len(), |r, m| gaussian_kernel((doses[r] - points[m]) / b) / b);
    let (coef, singular) = solve_normal_equations(&design, &pseudo, 0.0);
    // coef is (p+1) × M; store transposed, row per grid point
    let mut coefficients = Vec::with_capacity(points.len() * (p + 1));
    for m in 0..points.len() {
        coefficients.extend(coef.column(m).iter());
    }
    Ok(KernelDensityRegression {
        grid: grid.clone(),
        coefficients,
        n_covariates: p,
        bandwidth: b,
        singular,
    })
}
