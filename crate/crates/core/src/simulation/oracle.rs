//! True nuisance functions and Monte Carlo ground truth for the benchmark
//! scenarios.

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use super::dgp::{beta_log_density, DgpParameters, Scenario, DOSE_SLOPE, N_COVARIATES};
use super::SimulationError;
use crate::data::PanelDataset;
use crate::grid::{DensityCurve, DoseGrid};
use crate::interventions::InterventionSpec;
use crate::nuisance::{
    ConditionalDensity, DensityEval, FitDiagnostics, NuisanceError, NuisanceFit, NuisanceFitter,
};
use crate::rng::{stream_rng, streams};

/// Smallest Monte Carlo sample accepted by [`oracle_truth`].
pub const MIN_ORACLE_DRAWS: usize = 100_000;

/// Grid used for ground truth under families without a closed form.
pub const ORACLE_GRID_SIZE: usize = 1001;

/// Kummer's confluent hypergeometric series `M(a; c; z)` for `z ≥ 0`, scaled
/// by `exp(-z)` so large arguments stay finite.
fn kummer_scaled(a: f64, c: f64, z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0.0;
    loop {
        term *= (a + k) / (c + k) * z / (k + 1.0);
        sum += term;
        k += 1.0;
        if k > z && term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        if k > 10_000.0 {
            break;
        }
    }
    sum * (-z).exp()
}

/// Mean of `Beta(a, b)` after tilting by `exp(δ d)`:
/// `(a / c) · M(a+1; c+1; δ) / M(a; c; δ)` with `c = a + b`. Negative `δ` goes
/// through Kummer's transformation so every series term is positive.
pub fn tilted_beta_mean(a: f64, b: f64, delta: f64) -> f64 {
    let c = a + b;
    if delta >= 0.0 {
        a / c * kummer_scaled(a + 1.0, c + 1.0, delta) / kummer_scaled(a, c, delta)
    } else {
        a / c * kummer_scaled(b, c + 1.0, -delta) / kummer_scaled(b, c, -delta)
    }
}

/// `Beta(a, b)` density at the grid nodes, renormalized on the grid.
pub fn beta_on_grid(grid: &Arc<DoseGrid>, a: f64, b: f64) -> DensityCurve {
    let logs: Vec<f64> = grid.points().iter().map(|&d| beta_log_density(a, b, d)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = logs.iter().map(|l| (l - top).exp()).collect();
    DensityCurve::normalized(grid.clone(), values).expect("beta density has positive mass")
}

#[derive(Debug, Clone)]
struct TrueDoseDensity {
    params: DgpParameters,
    grid: Arc<DoseGrid>,
}

impl ConditionalDensity for TrueDoseDensity {
    fn density(&self, x: &[f64]) -> DensityEval {
        let (a, b) = self.params.beta_shapes(x);
        DensityEval {
            curve: beta_on_grid(&self.grid, a, b),
            floored: 0,
        }
    }
}

/// Supplies the true nuisance functions regardless of the training sample.
/// `mu_untreated_shift` adds a constant to the untreated outcome regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleFitter {
    pub scenario: Scenario,
    pub mu_untreated_shift: f64,
}

impl OracleFitter {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            mu_untreated_shift: 0.0,
        }
    }

    pub fn with_untreated_shift(mut self, shift: f64) -> Self {
        self.mu_untreated_shift = shift;
        self
    }
}

impl NuisanceFitter for OracleFitter {
    fn fit(&self, _train: &PanelDataset, grid: &Arc<DoseGrid>) -> Result<NuisanceFit, NuisanceError> {
        let params = self.scenario.parameters();
        let shift = self.mu_untreated_shift;
        Ok(NuisanceFit {
            grid: grid.clone(),
            outcome_treated: Arc::new(move |d: f64, x: &[f64]| params.mu_treated(d, x)),
            outcome_untreated: Arc::new(move |x: &[f64]| params.mu_untreated(x) + shift),
            propensity: Arc::new(move |x: &[f64]| params.propensity(x)),
            dose_density: Arc::new(TrueDoseDensity {
                params,
                grid: grid.clone(),
            }),
            diagnostics: FitDiagnostics::default(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleTruth {
    pub truth: f64,
    pub mc_se: f64,
    /// Accepted (treated) covariate draws.
    pub draws: usize,
}

/// Ground truth `E[ 0.5 E_q[D | X] + X(γ₂ - γ₁) | A > 0 ]` by Monte Carlo over
/// `n_mc` covariate draws, thinned to the treated by rejection on the true
/// propensity. The tilt uses the exact tilted Beta mean; other families are
/// applied to the Beta density on a fine grid.
pub fn oracle_truth(
    scenario: Scenario,
    spec: &InterventionSpec,
    n_mc: usize,
    seed: u64,
) -> Result<OracleTruth, SimulationError> {
    if n_mc < MIN_ORACLE_DRAWS {
        return Err(SimulationError::TooFewOracleDraws(n_mc));
    }
    spec.validate()?;
    let params = scenario.parameters();
    let grid = DoseGrid::shared(ORACLE_GRID_SIZE)?;
    let fixed_mean = spec.fixed_curve(&grid)?.map(|q| q.mean());
    let trend_gap: Vec<f64> = params.gamma2.iter().zip(&params.gamma1).map(|(g2, g1)| g2 - g1).collect();

    let mut rng = stream_rng(seed, streams::ORACLE);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut draws = 0usize;
    for _ in 0..n_mc {
        let x: [f64; N_COVARIATES] = std::array::from_fn(|_| rng.random::<f64>());
        if rng.random::<f64>() >= params.propensity(&x) {
            continue;
        }
        let (a, b) = params.beta_shapes(&x);
        let mean_dose = match (spec, fixed_mean) {
            (_, Some(m)) => m,
            (InterventionSpec::ExponentialTilt { delta }, None) => tilted_beta_mean(a, b, *delta),
            (_, None) => spec.apply(&beta_on_grid(&grid, a, b))?.mean(),
        };
        let value = DOSE_SLOPE * mean_dose + x.iter().zip(&trend_gap).map(|(v, g)| v * g).sum::<f64>();
        sum += value;
        sum_sq += value * value;
        draws += 1;
    }
    let m = draws as f64;
    let mean = sum / m;
    let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
    Ok(OracleTruth {
        truth: mean,
        mc_se: (var / m).sqrt(),
        draws,
    })
}
