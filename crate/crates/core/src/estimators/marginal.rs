//! One-step estimator under unconditional parallel trends, with closed-form
//! nuisances: a straight-line dose response among the treated, the untreated
//! mean change, the treated share, and a kernel density of the dose.

use super::{
    variance_plugin, EstimateDiagnostics, EstimateResult, EstimatorError, EstimatorOptions, FoldEstimate,
    OneStepTarget,
};
use crate::data::{assign_folds, PanelDataset};
use crate::grid::{DensityCurve, DoseGrid};
use crate::interventions::{tilt_density, InterventionSpec};
use crate::nuisance::density::{floor_and_normalize, gaussian_kernel};
use crate::nuisance::{Bandwidth, DENSITY_FLOOR, PROPENSITY_BOUNDS};

struct MarginalFit {
    intercept: f64,
    slope: f64,
    trend: f64,
    propensity: f64,
    density: DensityCurve,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

fn fit_marginal(
    data: &PanelDataset,
    rows: &[usize],
    grid: &std::sync::Arc<DoseGrid>,
    bandwidth: Bandwidth,
) -> Result<MarginalFit, EstimatorError> {
    let (treated, untreated): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| data.is_treated(i));
    if untreated.is_empty() {
        return Err(EstimatorError::NoUntreatedUnits);
    }
    if treated.len() < 2 {
        return Err(EstimatorError::NoTreatedUnits);
    }
    let doses: Vec<f64> = treated.iter().map(|&i| data.treatment()[i]).collect();
    let outcomes: Vec<f64> = treated.iter().map(|&i| data.dy()[i]).collect();
    let d_bar = mean(doses.iter().copied());
    let y_bar = mean(outcomes.iter().copied());
    let sxx: f64 = doses.iter().map(|d| (d - d_bar).powi(2)).sum();
    let sxy: f64 = doses.iter().zip(&outcomes).map(|(d, y)| (d - d_bar) * (y - y_bar)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };

    let b = bandwidth.resolve(&doses)?;
    let mut density: Vec<f64> = grid
        .points()
        .iter()
        .map(|&d| mean(doses.iter().map(|&x| gaussian_kernel((x - d) / b) / b)))
        .collect();
    floor_and_normalize(grid, &mut density, DENSITY_FLOOR);

    Ok(MarginalFit {
        intercept: y_bar - slope * d_bar,
        slope,
        trend: mean(untreated.iter().map(|&i| data.dy()[i])),
        propensity: (treated.len() as f64 / rows.len() as f64).clamp(PROPENSITY_BOUNDS.0, PROPENSITY_BOUNDS.1),
        density: DensityCurve::normalized(grid.clone(), density)?,
    })
}

/// Cross-fitted one-step estimate ignoring covariates. On data without
/// covariates it reproduces the conditional estimator with default learners.
pub fn onestep_upt(
    data: &PanelDataset,
    spec: &InterventionSpec,
    folds: usize,
    seed: u64,
    bandwidth: Bandwidth,
    options: &EstimatorOptions,
) -> Result<EstimateResult, EstimatorError> {
    options.validate()?;
    let grid = DoseGrid::shared(options.grid_size)?;
    let target = OneStepTarget::from_spec(spec, &grid)?;
    let assignment = assign_folds(data, folds, seed)?;
    let n = data.len();
    let mut eif = vec![0.0; n];
    let (mut psi, mut psi1, mut psi2, mut plugin) = (0.0, 0.0, 0.0, 0.0);
    let mut per_fold = Vec::with_capacity(folds);

    for k in 0..assignment.folds() {
        let fit = fit_marginal(data, &assignment.complement(k), &grid, bandwidth)
            .map_err(|e| EstimatorError::Fold { fold: k, source: Box::new(e) })?;
        let rows = assignment.members(k);
        let nk = rows.len() as f64;
        let nt = rows.iter().filter(|&&i| data.is_treated(i)).count();
        let p_hat = nt as f64 / nk;

        let q = match &target {
            OneStepTarget::Tilt(delta) => tilt_density(&fit.density, *delta),
            OneStepTarget::Fixed(q) => q.clone(),
        };
        let mu: Vec<f64> = grid.points().iter().map(|d| fit.intercept + fit.slope * d).collect();
        let m = q.expect(&mu);
        let weight = options.weight.weight(fit.propensity);

        let mut phi1 = Vec::with_capacity(rows.len());
        let mut phi2 = Vec::with_capacity(rows.len());
        for &i in &rows {
            let dy = data.dy()[i];
            if data.is_treated(i) {
                let d = data.treatment()[i];
                let center = match target {
                    OneStepTarget::Tilt(_) => m,
                    OneStepTarget::Fixed(_) => fit.intercept + fit.slope * d,
                };
                let ratio = q.at(d) / fit.density.at(d);
                phi1.push((ratio * (dy - center) + m) / p_hat);
                phi2.push(fit.trend / p_hat);
            } else {
                phi1.push(0.0);
                phi2.push(weight * (dy - fit.trend) / p_hat);
            }
        }
        let fold_psi1 = mean(phi1.iter().copied());
        let fold_psi2 = mean(phi2.iter().copied());
        for (j, &i) in rows.iter().enumerate() {
            let shift = if data.is_treated(i) { (fold_psi1 - fold_psi2) / p_hat } else { 0.0 };
            eif[i] = phi1[j] - phi2[j] - shift;
        }

        let share = nk / n as f64;
        psi += share * (fold_psi1 - fold_psi2);
        psi1 += share * fold_psi1;
        psi2 += share * fold_psi2;
        plugin += share * (m - fit.trend);
        per_fold.push(FoldEstimate {
            fold: k,
            psi_hat: fold_psi1 - fold_psi2,
            size: rows.len(),
            p_hat,
            plugin: m - fit.trend,
        });
    }

    let var = variance_plugin(&eif, n, psi, options.ci_level)?;
    Ok(EstimateResult {
        intervention: Some(*spec),
        psi_hat: psi,
        se: var.se,
        sigma2: var.sigma2,
        ci_low: var.ci_low,
        ci_high: var.ci_high,
        ci_level: options.ci_level,
        psi1_hat: psi1,
        psi2_hat: psi2,
        plugin,
        n,
        per_fold,
        eif_values: options.retain_eif.then_some(eif),
        diagnostics: EstimateDiagnostics::default(),
    })
}
