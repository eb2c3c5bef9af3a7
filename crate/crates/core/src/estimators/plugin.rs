use serde::Serialize;

use super::{check_curve, EstimatorError};
use crate::data::PanelDataset;
use crate::grid::{DensityCurve, DoseGrid};
use crate::interventions::InterventionSpec;
use crate::nuisance::{NuisanceFit, NuisanceFitter};

/// Plug-in estimate with its two components. No standard error is attached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PluginEstimate {
    pub intervention: InterventionSpec,
    pub psi_hat: f64,
    pub psi1_hat: f64,
    pub psi2_hat: f64,
    pub n_treated: usize,
}

/// Covariate-free plug-in: `∫ μ(d) q(d) dd` minus the mean outcome change
/// among the untreated.
pub fn plugin_upt(data: &PanelDataset, q: &DensityCurve, mu_on_grid: &[f64]) -> Result<f64, EstimatorError> {
    check_curve(q, mu_on_grid.len())?;
    let untreated = data.untreated_rows();
    if untreated.is_empty() {
        return Err(EstimatorError::NoUntreatedUnits);
    }
    let trend = untreated.iter().map(|&i| data.dy()[i]).sum::<f64>() / untreated.len() as f64;
    Ok(q.expect(mu_on_grid) - trend)
}

/// Conditional plug-in averaged over the treated units of `data`:
/// `mean_i { ∫ μ̂(d, Xᵢ) q̂(d | Xᵢ) dd - μ̂₀(Xᵢ) }`.
pub fn plugin_cpt(
    data: &PanelDataset,
    fit: &NuisanceFit,
    spec: &InterventionSpec,
) -> Result<PluginEstimate, EstimatorError> {
    spec.validate()?;
    let treated = data.treated_rows();
    if treated.is_empty() {
        return Err(EstimatorError::NoTreatedUnits);
    }
    let fixed = spec.fixed_curve(&fit.grid)?;
    let mut psi1 = 0.0;
    let mut psi2 = 0.0;
    for &i in &treated {
        let x = data.covariates(i);
        let mu = fit.outcome_treated.on_grid(&fit.grid, x);
        let m = match &fixed {
            Some(q) => q.expect(&mu),
            None => spec.apply(&fit.dose_density.density(x).curve)?.expect(&mu),
        };
        psi1 += m;
        psi2 += fit.outcome_untreated.value(x);
    }
    let nt = treated.len() as f64;
    Ok(PluginEstimate {
        intervention: *spec,
        psi_hat: (psi1 - psi2) / nt,
        psi1_hat: psi1 / nt,
        psi2_hat: psi2 / nt,
        n_treated: treated.len(),
    })
}

/// Fit nuisances on all of `data` and return the plug-in estimate.
pub fn plugin_estimate(
    data: &PanelDataset,
    spec: &InterventionSpec,
    fitter: &dyn NuisanceFitter,
    grid_size: usize,
) -> Result<PluginEstimate, EstimatorError> {
    let grid = DoseGrid::shared(grid_size)?;
    let fit = fitter.fit(data, &grid)?;
    plugin_cpt(data, &fit, spec)
}
