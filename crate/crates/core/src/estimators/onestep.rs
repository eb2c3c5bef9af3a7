//! Cross-fitted one-step estimator.
//!
//! Per evaluation fold `k` with treated share `p̂`:
//!
//! ```text
//! φ̂₁ᵢ = 1(Aᵢ>0)/p̂ · { rᵢ (ΔYᵢ - cᵢ) + mᵢ }     mᵢ = ∫ μ̂(d, Xᵢ) q̂(d | Xᵢ) dd
//! φ̂₂ᵢ = 1(Aᵢ=0)/p̂ · wᵢ (ΔYᵢ - μ̂₀(Xᵢ)) + 1(Aᵢ>0)/p̂ · μ̂₀(Xᵢ)
//! ```
//!
//! with `rᵢ = q̂(Dᵢ | Xᵢ) / π̂(Dᵢ | Xᵢ)`. Under the tilt `q̂` moves with `π̂`
//! and the centering is `cᵢ = mᵢ`; for a fixed `q` it is `cᵢ = μ̂(Dᵢ, Xᵢ)`.

use std::sync::Arc;

use rayon::prelude::*;

use super::{
    check_curve, variance_plugin, EstimateDiagnostics, EstimateResult, EstimatorError, EstimatorOptions,
    FoldEstimate,
};
use crate::data::{assign_folds, FoldAssignment, PanelDataset};
use crate::grid::{DensityCurve, DoseGrid};
use crate::interventions::{tilt_density, InterventionSpec};
use crate::nuisance::{NuisanceFit, NuisanceFitter};

/// Counterfactual dose law targeted by the one-step estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum OneStepTarget {
    /// Exponential tilt of the fitted dose density.
    Tilt(f64),
    /// A density that does not depend on the data.
    Fixed(DensityCurve),
}

impl OneStepTarget {
    /// Target for `spec` on `grid`; data-dependent families other than the
    /// tilt are rejected.
    pub fn from_spec(spec: &InterventionSpec, grid: &Arc<DoseGrid>) -> Result<Self, EstimatorError> {
        spec.validate()?;
        match *spec {
            InterventionSpec::ExponentialTilt { delta } => Ok(Self::Tilt(delta)),
            InterventionSpec::GaussianKernel { .. } => Err(EstimatorError::UnsupportedInterventionForOneStep(
                "gaussian kernel".into(),
            )),
            InterventionSpec::MinimumDose { .. } => Err(EstimatorError::UnsupportedInterventionForOneStep(
                "minimum dose".into(),
            )),
            _ => Ok(Self::Fixed(
                spec.fixed_curve(grid)?.expect("data-independent family has a fixed curve"),
            )),
        }
    }

    fn spec(&self) -> Option<InterventionSpec> {
        match *self {
            Self::Tilt(delta) => Some(InterventionSpec::tilt(delta)),
            Self::Fixed(_) => None,
        }
    }
}

/// One fold's contribution for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutput {
    pub size: usize,
    pub treated: usize,
    pub p_hat: f64,
    pub psi: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub plugin: f64,
    pub plugin1: f64,
    pub plugin2: f64,
    /// Centered influence values, aligned with the evaluation rows.
    pub eif: Vec<f64>,
    /// Per-unit one-step corrections; their mean plus `plugin` is `psi`.
    pub correction: Vec<f64>,
    pub diagnostics: EstimateDiagnostics,
}

struct TreatedUnit {
    pos: usize,
    dose: f64,
    dy: f64,
    mu0: f64,
    pi: DensityCurve,
    mu_grid: Vec<f64>,
    mu_obs: f64,
}

struct UntreatedUnit {
    pos: usize,
    dy: f64,
    mu0: f64,
    weight: f64,
}

/// Evaluate one fold for a single target.
pub fn onestep_fold(
    data: &PanelDataset,
    eval_rows: &[usize],
    fit: &NuisanceFit,
    target: &OneStepTarget,
    options: &EstimatorOptions,
) -> Result<FoldOutput, EstimatorError> {
    let mut out = onestep_fold_many(data, eval_rows, fit, std::slice::from_ref(target), options)?;
    Ok(out.remove(0))
}

/// Evaluate one fold for several targets, sharing the nuisance evaluations.
pub fn onestep_fold_many(
    data: &PanelDataset,
    eval_rows: &[usize],
    fit: &NuisanceFit,
    targets: &[OneStepTarget],
    options: &EstimatorOptions,
) -> Result<Vec<FoldOutput>, EstimatorError> {
    let grid = &fit.grid;
    for target in targets {
        if let OneStepTarget::Fixed(q) = target {
            check_curve(q, grid.len())?;
        }
    }

    let mut base_diag = EstimateDiagnostics::default();
    let mut treated = Vec::new();
    let mut untreated = Vec::new();
    for (pos, &i) in eval_rows.iter().enumerate() {
        let x = data.covariates(i);
        let mu0 = fit.outcome_untreated.value(x);
        let dy = data.dy()[i];
        if data.is_treated(i) {
            let dose = data.treatment()[i];
            if !(dose > 0.0 && dose <= 1.0) {
                return Err(EstimatorError::DoseOutsideGrid { row: i, dose });
            }
            let eval = fit.dose_density.density(x);
            if eval.floored > 0 {
                base_diag.density_floored += 1;
            }
            treated.push(TreatedUnit {
                pos,
                dose,
                dy,
                mu0,
                pi: eval.curve,
                mu_grid: fit.outcome_treated.on_grid(grid, x),
                mu_obs: fit.outcome_treated.value(dose, x),
            });
        } else {
            let (pi, clamped) = fit.clamped_propensity(x);
            base_diag.propensity_clamped += clamped as usize;
            untreated.push(UntreatedUnit {
                pos,
                dy,
                mu0,
                weight: options.weight.weight(pi),
            });
        }
    }
    if treated.is_empty() {
        return Err(EstimatorError::NoTreatedUnits);
    }
    if untreated.is_empty() {
        return Err(EstimatorError::NoUntreatedUnits);
    }

    let n = eval_rows.len();
    let nt = treated.len();
    let p_hat = nt as f64 / n as f64;
    let mut phi1 = vec![0.0; n];
    let mut phi2 = vec![0.0; n];
    let mut correction = vec![0.0; n];
    let mut mask = vec![false; n];
    for u in &treated {
        mask[u.pos] = true;
    }

    // the untreated-trend pieces do not depend on the target
    let mut plugin2 = 0.0;
    for u in &treated {
        phi2[u.pos] = u.mu0 / p_hat;
        plugin2 += u.mu0;
    }
    plugin2 /= nt as f64;
    for u in &untreated {
        let term = u.weight * (u.dy - u.mu0) / p_hat;
        phi2[u.pos] = term;
        correction[u.pos] = -term;
    }
    let psi2 = phi2.iter().sum::<f64>() / n as f64;
    let untreated_correction = correction.clone();

    let mut outputs = Vec::with_capacity(targets.len());
    for target in targets {
        correction.copy_from_slice(&untreated_correction);
        let mut plugin1 = 0.0;
        for u in &treated {
            let (m, ratio, center) = match target {
                OneStepTarget::Tilt(delta) => {
                    let q = tilt_density(&u.pi, *delta);
                    let m = q.expect(&u.mu_grid);
                    (m, q.at(u.dose) / u.pi.at(u.dose), m)
                }
                OneStepTarget::Fixed(q) => {
                    let m = q.expect(&u.mu_grid);
                    (m, q.at(u.dose) / u.pi.at(u.dose), u.mu_obs)
                }
            };
            let adjust = ratio * (u.dy - center) / p_hat;
            phi1[u.pos] = adjust + m / p_hat;
            correction[u.pos] = adjust;
            plugin1 += m;
        }
        plugin1 /= nt as f64;
        let psi1 = phi1.iter().sum::<f64>() / n as f64;

        let eif = (0..n)
            .map(|j| {
                let shift = if mask[j] { (psi1 - psi2) / p_hat } else { 0.0 };
                phi1[j] - phi2[j] - shift
            })
            .collect();
        outputs.push(FoldOutput {
            size: n,
            treated: nt,
            p_hat,
            psi: psi1 - psi2,
            psi1,
            psi2,
            plugin: plugin1 - plugin2,
            plugin1,
            plugin2,
            eif,
            correction: correction.clone(),
            diagnostics: base_diag,
        });
    }
    Ok(outputs)
}

/// Fit nuisances on each training split, evaluate every target on the held
/// out fold, and aggregate with fold-size weights. Folds run in parallel and
/// are combined in fold order.
pub fn crossfit(
    data: &PanelDataset,
    folds: &FoldAssignment,
    fitter: &dyn NuisanceFitter,
    grid: &Arc<DoseGrid>,
    targets: &[OneStepTarget],
    options: &EstimatorOptions,
) -> Result<Vec<EstimateResult>, EstimatorError> {
    options.validate()?;
    let per_fold: Vec<(Vec<usize>, Vec<FoldOutput>, EstimateDiagnostics)> = (0..folds.folds())
        .into_par_iter()
        .map(|k| {
            let wrap = |e: EstimatorError| EstimatorError::Fold {
                fold: k,
                source: Box::new(e),
            };
            let train = data.select(&folds.complement(k));
            let fit = fitter.fit(&train, grid).map_err(|e| wrap(e.into()))?;
            let eval_rows = folds.members(k);
            let outputs = onestep_fold_many(data, &eval_rows, &fit, targets, options).map_err(wrap)?;
            let fit_diag = EstimateDiagnostics {
                singular_fallbacks: fit.diagnostics.singular_fallbacks,
                non_convergence: fit.diagnostics.non_convergence,
                ..Default::default()
            };
            Ok((eval_rows, outputs, fit_diag))
        })
        .collect::<Result<_, EstimatorError>>()?;

    let n = data.len();
    let mut results = Vec::with_capacity(targets.len());
    for (t, target) in targets.iter().enumerate() {
        let mut psi = 0.0;
        let mut psi1 = 0.0;
        let mut psi2 = 0.0;
        let mut plugin = 0.0;
        let mut eif = vec![0.0; n];
        let mut diagnostics = EstimateDiagnostics::default();
        let mut fold_rows = Vec::with_capacity(per_fold.len());
        for (k, (rows, outputs, fit_diag)) in per_fold.iter().enumerate() {
            let out = &outputs[t];
            let share = out.size as f64 / n as f64;
            psi += share * out.psi;
            psi1 += share * out.psi1;
            psi2 += share * out.psi2;
            plugin += share * out.plugin;
            for (&i, &v) in rows.iter().zip(&out.eif) {
                eif[i] = v;
            }
            diagnostics.add(&out.diagnostics);
            diagnostics.add(fit_diag);
            fold_rows.push(FoldEstimate {
                fold: k,
                psi_hat: out.psi,
                size: out.size,
                p_hat: out.p_hat,
                plugin: out.plugin,
            });
        }
        let var = variance_plugin(&eif, n, psi, options.ci_level)?;
        results.push(EstimateResult {
            intervention: target.spec(),
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
            per_fold: fold_rows,
            eif_values: options.retain_eif.then_some(eif),
            diagnostics,
        });
    }
    Ok(results)
}

/// Cross-fitted one-step estimate for `spec` with `folds` stratified folds.
pub fn onestep_crossfit(
    data: &PanelDataset,
    spec: &InterventionSpec,
    folds: usize,
    seed: u64,
    fitter: &dyn NuisanceFitter,
    options: &EstimatorOptions,
) -> Result<EstimateResult, EstimatorError> {
    let grid = DoseGrid::shared(options.grid_size)?;
    let target = OneStepTarget::from_spec(spec, &grid)?;
    let assignment = assign_folds(data, folds, seed)?;
    let mut result = crossfit(data, &assignment, fitter, &grid, &[target], options)?.remove(0);
    result.intervention = Some(*spec);
    Ok(result)
}

/// Cross-fitted one-step estimate for a fixed counterfactual density `q`.
pub fn onestep_parametric(
    data: &PanelDataset,
    q: &DensityCurve,
    folds: usize,
    seed: u64,
    fitter: &dyn NuisanceFitter,
    options: &EstimatorOptions,
) -> Result<EstimateResult, EstimatorError> {
    let assignment = assign_folds(data, folds, seed)?;
    let target = OneStepTarget::Fixed(q.clone());
    Ok(crossfit(data, &assignment, fitter, q.grid(), &[target], options)?.remove(0))
}
