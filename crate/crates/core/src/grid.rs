//! Dose grid over (0, 1] and the quadrature shared by every layer.
//!
//! Nodes sit at cell midpoints `d_m = (m - 1/2) / M` and every node carries
//! weight `1 / M`, so the weights sum to the length of the dose support.
//! All dose integrals in the crate go through [`DoseGrid::integrate`].

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

/// Smallest grid size accepted anywhere in the crate.
pub const MIN_GRID_SIZE: usize = 11;

/// Default number of grid points.
pub const DEFAULT_GRID_SIZE: usize = 101;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid size {0} is below the minimum of {MIN_GRID_SIZE}")]
    TooFewPoints(usize),
    #[error("curve has {got} values but the grid has {expected} points")]
    LengthMismatch { expected: usize, got: usize },
    #[error("density values must be finite and nonnegative")]
    InvalidDensity,
    #[error("density has zero total mass on the grid")]
    ZeroMass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoseGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl DoseGrid {
    pub fn uniform(size: usize) -> Result<Self, GridError> {
        if size < MIN_GRID_SIZE {
            return Err(GridError::TooFewPoints(size));
        }
        let m = size as f64;
        let points = (0..size).map(|i| (i as f64 + 0.5) / m).collect();
        let weights = vec![1.0 / m; size];
        Ok(Self { points, weights })
    }

    pub fn shared(size: usize) -> Result<Arc<Self>, GridError> {
        Self::uniform(size).map(Arc::new)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Quadrature sum `Σ values[m] · weights[m]`. The weights are equal, so
    /// the sum is taken first and divided by `M` once.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        values.iter().sum::<f64>() / self.len() as f64
    }

    /// Quadrature of a pointwise product, `Σ f[m] · g[m] · weights[m]`.
    pub fn integrate_product(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / self.len() as f64
    }

    /// Linear interpolation of grid values at `dose`. Doses outside
    /// `[d_1, d_M]` take the nearest boundary value.
    pub fn interpolate(&self, values: &[f64], dose: f64) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let m = self.len();
        let first = self.points[0];
        let last = self.points[m - 1];
        if dose <= first {
            return values[0];
        }
        if dose >= last {
            return values[m - 1];
        }
        // uniform spacing: locate the left node directly
        let pos = (dose - first) / self.spacing();
        let left = (pos.floor() as usize).min(m - 2);
        let frac = pos - left as f64;
        values[left] + frac * (values[left + 1] - values[left])
    }

    /// Index of the first node strictly above `threshold`, if any.
    pub fn first_above(&self, threshold: f64) -> Option<usize> {
        self.points.iter().position(|&d| d > threshold)
    }
}

/// Integrate grid values with the grid's quadrature.
pub fn integrate_over_dose(grid: &DoseGrid, values: &[f64]) -> f64 {
    grid.integrate(values)
}

/// A density tabulated on a [`DoseGrid`], normalized by grid quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    grid: Arc<DoseGrid>,
    values: Vec<f64>,
}

impl DensityCurve {
    /// Build a curve from raw nonnegative values, rescaling so the grid
    /// integral is one.
    pub fn normalized(grid: Arc<DoseGrid>, mut values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GridError::InvalidDensity);
        }
        let mass = grid.integrate(&values);
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(GridError::ZeroMass);
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { grid, values })
    }

    /// Uniform density on (0, 1].
    pub fn uniform(grid: Arc<DoseGrid>) -> Self {
        let values = vec![1.0; grid.len()];
        Self::normalized(grid, values).expect("flat curve has positive mass")
    }

    /// Wrap values already known to be normalized. Used on hot paths where
    /// the caller has just normalized them.
    pub(crate) fn from_normalized_unchecked(grid: Arc<DoseGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<DoseGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, dose: f64) -> f64 {
        self.grid.interpolate(&self.values, dose)
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn mean(&self) -> f64 {
        self.grid.integrate_product(&self.values, self.grid.points())
    }

    /// `∫ f(d) q(d) dd` for `f` tabulated on the same grid.
    pub fn expect(&self, f: &[f64]) -> f64 {
        self.grid.integrate_product(&self.values, f)
    }

    /// Grid point with the largest density value.
    pub fn mode(&self) -> f64 {
        let (idx, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            });
        self.grid.points()[idx]
    }
}
