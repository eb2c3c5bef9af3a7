//! Cross-fitted one-step and plug-in estimators: algebraic identities, exact
//! cases on noise-free data, fold hygiene, determinism, and agreement with the
//! scenario oracles.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use tiltdid::data::{assign_folds, PanelDataset};
use tiltdid::estimators::*;
use tiltdid::grid::{DensityCurve, DoseGrid};
use tiltdid::interventions::{tilt_density, BaseDistribution, InterventionSpec};
use tiltdid::nuisance::*;
use tiltdid::rng::stream_rng;
use tiltdid::simulation::{oracle_truth, simulate_scenario, OracleFitter, Scenario, ScenarioSpec};

fn scenario_one(n: usize, seed: u64) -> PanelDataset {
    simulate_scenario(&ScenarioSpec { scenario: Scenario::One, n, seed }).unwrap()
}

/// Same design as scenario one with every outcome change set to its mean.
fn noise_free(n: usize, seed: u64) -> PanelDataset {
    let data = scenario_one(n, seed);
    let params = Scenario::One.parameters();
    let dy = (0..n)
        .map(|i| {
            let x = data.covariates(i);
            if data.is_treated(i) {
                params.mu_treated(data.treatment()[i], x)
            } else {
                params.mu_untreated(x)
            }
        })
        .collect();
    PanelDataset::from_changes(
        dy,
        data.treatment().to_vec(),
        data.covariate_matrix().to_vec(),
        data.covariate_names().to_vec(),
    )
    .unwrap()
}

fn without_covariates(data: &PanelDataset) -> PanelDataset {
    PanelDataset::from_changes(data.dy().to_vec(), data.treatment().to_vec(), vec![], vec![]).unwrap()
}

fn options() -> EstimatorOptions {
    EstimatorOptions::default()
}

#[test]
fn aggregate_is_the_fold_share_weighted_mean() {
    let data = scenario_one(1500, 1);
    let result = onestep_crossfit(&data, &InterventionSpec::tilt(1.5), 5, 11, &LearnerSet::default(), &options()).unwrap();
    let n = data.len() as f64;
    let mut weighted = 0.0;
    for fold in &result.per_fold {
        weighted += fold.size as f64 / n * fold.psi_hat;
    }
    assert_eq!(result.psi_hat, weighted);
    assert_eq!(result.per_fold.iter().map(|f| f.size).sum::<usize>(), data.len());
    assert!(result.ci_low <= result.psi_hat && result.psi_hat <= result.ci_high);
    assert!(result.covers(result.psi_hat));
}

#[test]
fn retained_influence_values_are_centered_and_give_the_variance() {
    let data = scenario_one(1200, 2);
    let opts = EstimatorOptions { retain_eif: true, ..options() };
    let result = onestep_crossfit(&data, &InterventionSpec::tilt(-2.0), 4, 3, &LearnerSet::default(), &opts).unwrap();
    let eif = result.eif_values.as_ref().unwrap();
    assert_eq!(eif.len(), data.len());
    let mean = eif.iter().sum::<f64>() / eif.len() as f64;
    assert!(mean.abs() <= 1e-8, "mean influence value {mean}");
    let sigma2 = eif.iter().map(|v| v * v).sum::<f64>() / eif.len() as f64;
    assert_abs_diff_eq!(result.sigma2, sigma2, epsilon = 1e-12);
    assert_abs_diff_eq!(result.se, (sigma2 / eif.len() as f64).sqrt(), epsilon = 1e-12);
    let without = onestep_crossfit(&data, &InterventionSpec::tilt(-2.0), 4, 3, &LearnerSet::default(), &options()).unwrap();
    assert!(without.eif_values.is_none());
    assert_eq!(without.psi_hat, result.psi_hat);
}

#[test]
fn one_step_is_plugin_plus_mean_correction() {
    let data = scenario_one(1000, 4);
    let folds = assign_folds(&data, 2, 5).unwrap();
    let grid = DoseGrid::shared(101).unwrap();
    let train = data.select(&folds.complement(0));
    let fit = LearnerSet::default().fit(&train, &grid).unwrap();
    let rows = folds.members(0);
    let targets = [
        OneStepTarget::Tilt(3.0),
        OneStepTarget::Fixed(DensityCurve::uniform(grid.clone())),
    ];
    for weight in [CorrectionWeight::Odds, CorrectionWeight::InverseOdds] {
        let opts = EstimatorOptions { weight, ..options() };
        for target in &targets {
            let out = onestep_fold(&data, &rows, &fit, target, &opts).unwrap();
            let mean_correction = out.correction.iter().sum::<f64>() / out.size as f64;
            assert_abs_diff_eq!(out.plugin + mean_correction, out.psi, epsilon = 1e-10);
            assert_abs_diff_eq!(out.plugin, out.plugin1 - out.plugin2, epsilon = 1e-14);
            assert_abs_diff_eq!(out.psi, out.psi1 - out.psi2, epsilon = 1e-14);
        }
    }
}

#[test]
fn fixed_density_with_exact_nuisances_on_noise_free_data_is_the_plugin() {
    let data = noise_free(800, 6);
    let grid = DoseGrid::shared(101).unwrap();
    let q = tiltdid::interventions::parametric_density(&BaseDistribution::Beta { alpha: 2.0, beta: 5.0 }, &grid).unwrap();
    let fit = OracleFitter::new(Scenario::One).fit(&data, &grid).unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let out = onestep_fold(&data, &rows, &fit, &OneStepTarget::Fixed(q.clone()), &options()).unwrap();
    assert!(out.correction.iter().all(|&c| c == 0.0));
    assert_abs_diff_eq!(out.psi, out.plugin, epsilon = 1e-12);

    let result = onestep_parametric(&data, &q, 5, 7, &OracleFitter::new(Scenario::One), &options()).unwrap();
    assert_abs_diff_eq!(result.psi_hat, result.plugin, epsilon = 1e-12);
    let direct = plugin_cpt(&data, &fit, &InterventionSpec::Parametric { base: BaseDistribution::Beta { alpha: 2.0, beta: 5.0 } }).unwrap();
    assert_abs_diff_eq!(result.psi_hat, direct.psi_hat, epsilon = 1e-12);
}

struct FlatDensity(Arc<DoseGrid>);

impl ConditionalDensity for FlatDensity {
    fn density(&self, _x: &[f64]) -> DensityEval {
        DensityEval { curve: DensityCurve::uniform(self.0.clone()), floored: 0 }
    }
}

/// The tilt correction uses the residual about the tilted mean, so it vanishes
/// exactly only when the response does not depend on the dose.
#[test]
fn tilt_correction_vanishes_when_response_is_flat_in_dose() {
    let mut rng = stream_rng(8, 0);
    use rand::Rng;
    let n = 400;
    let a: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 - rng.random::<f64>() }).collect();
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let dy: Vec<f64> = (0..n).map(|i| if a[i] > 0.0 { 2.0 * x[i] } else { -x[i] }).collect();
    let data = PanelDataset::from_changes(dy, a, x, vec!["x".into()]).unwrap();
    let grid = DoseGrid::shared(101).unwrap();
    let fit = NuisanceFit {
        grid: grid.clone(),
        outcome_treated: Arc::new(|_d: f64, x: &[f64]| 2.0 * x[0]),
        outcome_untreated: Arc::new(|x: &[f64]| -x[0]),
        propensity: Arc::new(|_x: &[f64]| 2.0 / 3.0),
        dose_density: Arc::new(FlatDensity(grid.clone())),
        diagnostics: FitDiagnostics::default(),
    };
    let rows: Vec<usize> = (0..n).collect();
    for delta in [0.0, 2.0, -7.0] {
        let out = onestep_fold(&data, &rows, &fit, &OneStepTarget::Tilt(delta), &options()).unwrap();
        assert!(out.correction.iter().all(|&c| c.abs() <= 1e-12));
        assert_abs_diff_eq!(out.psi, out.plugin, epsilon = 1e-12);
    }
}

#[test]
fn covariate_free_plugin_with_constant_response() {
    let data = PanelDataset::from_changes(vec![1.0, 2.0, 9.0, 4.0], vec![0.0, 0.0, 0.3, 0.0], vec![], vec![]).unwrap();
    let grid = DoseGrid::shared(21).unwrap();
    let q = DensityCurve::uniform(grid.clone());
    let psi = plugin_upt(&data, &q, &[3.0; 21]).unwrap();
    assert_abs_diff_eq!(psi, 3.0 - 7.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn covariate_free_plugin_with_linear_response_and_uniform_density() {
    let data = PanelDataset::from_changes(vec![0.0, 0.0, 0.1], vec![0.0, 0.0, 0.2], vec![], vec![]).unwrap();
    let grid = DoseGrid::shared(101).unwrap();
    let mu: Vec<f64> = grid.points().iter().map(|d| 0.5 * d).collect();
    let psi = plugin_upt(&data, &DensityCurve::uniform(grid.clone()), &mu).unwrap();
    assert_abs_diff_eq!(psi, 0.25, epsilon = 1e-4);
}

#[test]
fn narrow_kernel_plugin_recovers_the_dose_response_at_its_center() {
    let mut rng = stream_rng(9, 0);
    use rand::Rng;
    let n = 600;
    let a: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 - rng.random::<f64>() }).collect();
    let dy: Vec<f64> = a.iter().map(|&d| 0.5 * d).collect();
    let data = PanelDataset::from_changes(dy, a, vec![], vec![]).unwrap();
    let (mu, _) = fit_outcome_treated(&data, &data.treated_rows(), &LearnerSpec::Ols, DoseBasis::Linear).unwrap();
    let grid = DoseGrid::shared(101).unwrap();
    for &d in grid.points() {
        assert_abs_diff_eq!(mu.value(d, &[]), 0.5 * d, epsilon = 1e-10);
    }
    let q = InterventionSpec::GaussianKernel { delta: 0.01, center: 0.5 }
        .apply(&DensityCurve::uniform(grid.clone()))
        .unwrap();
    let psi = plugin_upt(&data, &q, &mu.on_grid(&grid, &[])).unwrap();
    assert_abs_diff_eq!(psi, 0.25, epsilon = 2e-3);
}

#[test]
fn conditional_plugin_without_covariates_is_the_marginal_plugin() {
    let data = without_covariates(&scenario_one(1000, 10));
    let grid = DoseGrid::shared(101).unwrap();
    let fit = LearnerSet::default().fit(&data, &grid).unwrap();
    for spec in [InterventionSpec::tilt(0.0), InterventionSpec::tilt(4.0), InterventionSpec::MinimumDose { threshold: 0.3 }] {
        let cpt = plugin_cpt(&data, &fit, &spec).unwrap();
        let q = spec.apply(&fit.dose_density.density(&[]).curve).unwrap();
        let upt = plugin_upt(&data, &q, &fit.outcome_treated.on_grid(&grid, &[])).unwrap();
        assert_abs_diff_eq!(cpt.psi_hat, upt, epsilon = 1e-10);
    }
}

#[test]
fn exact_nuisance_plugin_is_centered_on_the_truth() {
    let grid = DoseGrid::shared(101).unwrap();
    let estimates: Vec<f64> = (0..200)
        .map(|seed| {
            let data = scenario_one(2000, 1000 + seed);
            let fit = OracleFitter::new(Scenario::One).fit(&data, &grid).unwrap();
            plugin_cpt(&data, &fit, &InterventionSpec::tilt(0.0)).unwrap().psi_hat
        })
        .collect();
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt();
    let mc_se = sd / r.sqrt();
    assert!((mean - 0.25).abs() <= 2.0 * mc_se, "mean {mean}, mc se {mc_se}");
}

#[test]
fn untreated_component_is_the_treated_covariate_mean() {
    use rand::Rng;
    let params = Scenario::One.parameters();
    // independent Monte Carlo for E[X γ₁ | A > 0]
    let mut rng = stream_rng(12, 1);
    let (mut sum, mut count) = (0.0, 0usize);
    for _ in 0..1_000_000 {
        let x: [f64; 10] = std::array::from_fn(|_| rng.random::<f64>());
        if rng.random::<f64>() < params.propensity(&x) {
            sum += params.mu_untreated(&x);
            count += 1;
        }
    }
    let truth = sum / count as f64;

    let data = scenario_one(20_000, 13);
    let grid = DoseGrid::shared(101).unwrap();
    let fit = OracleFitter::new(Scenario::One).fit(&data, &grid).unwrap();
    let est = plugin_cpt(&data, &fit, &InterventionSpec::tilt(0.0)).unwrap();
    let values: Vec<f64> = data.treated_rows().iter().map(|&i| params.mu_untreated(data.covariates(i))).collect();
    let m = values.len() as f64;
    let sd = (values.iter().map(|v| (v - est.psi2_hat).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    assert!((est.psi2_hat - truth).abs() <= 3.0 * sd / m.sqrt(), "{} vs {truth}", est.psi2_hat);
    // equal outcome coefficients cancel in the difference
    assert_abs_diff_eq!(est.psi_hat, est.psi1_hat - est.psi2_hat, epsilon = 1e-12);
}

#[test]
fn two_and_five_folds_agree() {
    let data = scenario_one(2000, 14);
    let spec = InterventionSpec::tilt(1.0);
    let two = onestep_crossfit(&data, &spec, 2, 15, &LearnerSet::default(), &options()).unwrap();
    let five = onestep_crossfit(&data, &spec, 5, 15, &LearnerSet::default(), &options()).unwrap();
    assert_eq!(two.per_fold.len(), 2);
    assert_eq!(five.per_fold.len(), 5);
    assert!((two.psi_hat - five.psi_hat).abs() <= 3.0 * two.se.max(five.se));
}

#[test]
fn estimates_are_identical_across_runs_and_thread_counts() {
    let data = scenario_one(1500, 16);
    let spec = InterventionSpec::tilt(-1.0);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| onestep_crossfit(&data, &spec, 5, 17, &LearnerSet::default(), &options()).unwrap())
    };
    let first = run(1);
    assert_eq!(first, run(1));
    assert_eq!(first, run(4));
    let other_seed = onestep_crossfit(&data, &spec, 5, 18, &LearnerSet::default(), &options()).unwrap();
    assert_ne!(first.psi_hat, other_seed.psi_hat);
}

#[test]
fn tilted_estimates_track_the_oracle() {
    let data = scenario_one(2000, 19);
    for delta in [-10.0, -3.0, 0.0, 3.0, 10.0] {
        let spec = InterventionSpec::tilt(delta);
        let est = onestep_crossfit(&data, &spec, 5, 20, &LearnerSet::default(), &options()).unwrap();
        let truth = oracle_truth(Scenario::One, &spec, 1_000_000, 21).unwrap().truth;
        assert!(
            (est.psi_hat - truth).abs() <= 3.0 * est.se,
            "delta {delta}: estimate {} truth {truth} se {}",
            est.psi_hat,
            est.se
        );
    }
}

#[test]
fn uniform_fixed_density_recovers_the_average_effect() {
    let grid = DoseGrid::shared(101).unwrap();
    let q = DensityCurve::uniform(grid);
    let estimates: Vec<f64> = (0..300)
        .map(|r| {
            let data = scenario_one(2000, 5000 + r);
            onestep_parametric(&data, &q, 5, r, &LearnerSet::default(), &options()).unwrap().psi_hat
        })
        .collect();
    let reps = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / reps;
    let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1.0)).sqrt();
    assert!((mean - 0.25).abs() <= 2.0 * sd / reps.sqrt(), "mean {mean}, mc se {}", sd / reps.sqrt());
}

#[test]
fn fitted_marginal_density_as_fixed_target_matches_zero_tilt() {
    let data = scenario_one(2000, 22);
    let grid = DoseGrid::shared(101).unwrap();
    let fit = LearnerSet::default().fit(&data, &grid).unwrap();
    let treated = data.treated_rows();
    let mut marginal = vec![0.0; grid.len()];
    for &i in &treated {
        for (m, v) in marginal.iter_mut().zip(fit.dose_density.density(data.covariates(i)).curve.values()) {
            *m += v / treated.len() as f64;
        }
    }
    let q = DensityCurve::normalized(grid.clone(), marginal).unwrap();
    let fixed = onestep_parametric(&data, &q, 5, 23, &LearnerSet::default(), &options()).unwrap();
    let tilt = onestep_crossfit(&data, &InterventionSpec::tilt(0.0), 5, 23, &LearnerSet::default(), &options()).unwrap();
    assert!((fixed.psi_hat - tilt.psi_hat).abs() <= 3.0 * fixed.se.max(tilt.se));
}

/// Wraps the default learners and records which outcome values each fit saw.
/// Pre-period outcomes carry the row index.
struct RecordingFitter {
    seen: Mutex<Vec<BTreeSet<usize>>>,
}

impl NuisanceFitter for RecordingFitter {
    fn fit(&self, train: &PanelDataset, grid: &Arc<DoseGrid>) -> Result<NuisanceFit, NuisanceError> {
        let rows = train.y0().iter().map(|&v| v as usize).collect();
        self.seen.lock().unwrap().push(rows);
        LearnerSet::default().fit(train, grid)
    }
}

#[test]
fn nuisance_fits_never_see_their_evaluation_fold() {
    let base = scenario_one(900, 24);
    let y0: Vec<f64> = (0..base.len()).map(|i| i as f64).collect();
    let y1: Vec<f64> = y0.iter().zip(base.dy()).map(|(a, b)| a + b).collect();
    let data = PanelDataset::new(
        y0,
        y1,
        base.treatment().to_vec(),
        base.covariate_matrix().to_vec(),
        base.covariate_names().to_vec(),
    )
    .unwrap();
    let fitter = RecordingFitter { seen: Mutex::new(Vec::new()) };
    let folds = assign_folds(&data, 5, 25).unwrap();
    let grid = DoseGrid::shared(101).unwrap();
    crossfit(&data, &folds, &fitter, &grid, &[OneStepTarget::Tilt(1.0)], &options()).unwrap();
    let mut seen = fitter.seen.into_inner().unwrap();
    assert_eq!(seen.len(), 5);
    for k in 0..5 {
        let members: BTreeSet<usize> = folds.members(k).into_iter().collect();
        let complement: BTreeSet<usize> = folds.complement(k).into_iter().collect();
        let pos = seen.iter().position(|s| *s == complement).expect("a fit trained on the complement");
        assert!(seen[pos].is_disjoint(&members));
        seen.remove(pos);
    }
}

#[test]
fn kernel_and_minimum_dose_have_no_one_step_form() {
    let data = scenario_one(500, 26);
    for spec in [
        InterventionSpec::GaussianKernel { delta: 0.1, center: 0.5 },
        InterventionSpec::MinimumDose { threshold: 0.2 },
    ] {
        let err = onestep_crossfit(&data, &spec, 5, 0, &LearnerSet::default(), &options()).unwrap_err();
        assert!(matches!(err, EstimatorError::UnsupportedInterventionForOneStep(_)));
        assert!(plugin_estimate(&data, &spec, &LearnerSet::default(), 101).is_ok());
    }
}

#[test]
fn fixed_density_on_another_grid_is_rejected() {
    let data = scenario_one(500, 27);
    let grid = DoseGrid::shared(51).unwrap();
    let fit = LearnerSet::default().fit(&data, &DoseGrid::shared(101).unwrap()).unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let err = onestep_fold(&data, &rows, &fit, &OneStepTarget::Fixed(DensityCurve::uniform(grid)), &options()).unwrap_err();
    assert!(matches!(err, EstimatorError::GridMismatch { .. }));
}

#[test]
fn degenerate_samples_are_rejected() {
    let all_treated = PanelDataset::from_changes(vec![0.1; 20], vec![0.5; 20], vec![], vec![]);
    if let Ok(data) = all_treated {
        let err = onestep_crossfit(&data, &InterventionSpec::tilt(0.0), 2, 0, &LearnerSet::default(), &options());
        assert!(err.is_err());
    }
    let bad_level = EstimatorOptions { ci_level: 1.5, ..options() };
    let err = onestep_crossfit(&scenario_one(300, 28), &InterventionSpec::tilt(0.0), 2, 0, &LearnerSet::default(), &bad_level);
    assert!(matches!(err, Err(EstimatorError::InvalidCiLevel(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn marginal_estimator_matches_conditional_path_without_covariates(seed in 0u64..10_000, delta in -8.0f64..8.0) {
        let data = without_covariates(&scenario_one(400, seed));
        let spec = InterventionSpec::tilt(delta);
        let cpt = onestep_crossfit(&data, &spec, 3, seed, &LearnerSet::default(), &options()).unwrap();
        let upt = onestep_upt(&data, &spec, 3, seed, Bandwidth::Auto, &options()).unwrap();
        prop_assert!((cpt.psi_hat - upt.psi_hat).abs() <= 1e-10);
        prop_assert!((cpt.se - upt.se).abs() <= 1e-10);
    }

    #[test]
    fn fold_estimates_aggregate_and_influence_values_center(seed in 0u64..10_000, delta in -5.0f64..5.0, k in 2usize..6) {
        let data = scenario_one(400, seed);
        let opts = EstimatorOptions { retain_eif: true, ..options() };
        let r = onestep_crossfit(&data, &InterventionSpec::tilt(delta), k, seed, &LearnerSet::default(), &opts).unwrap();
        let weighted: f64 = r.per_fold.iter().map(|f| f.size as f64 / data.len() as f64 * f.psi_hat).sum();
        prop_assert!((r.psi_hat - weighted).abs() <= 1e-12);
        let eif = r.eif_values.unwrap();
        prop_assert!((eif.iter().sum::<f64>() / eif.len() as f64).abs() <= 1e-8);
        prop_assert!(r.ci_low <= r.psi_hat && r.psi_hat <= r.ci_high);
    }

    #[test]
    fn tilt_density_on_fitted_curves_is_normalized(seed in 0u64..1000, delta in -50.0f64..50.0) {
        let data = scenario_one(300, seed);
        let grid = DoseGrid::shared(101).unwrap();
        let fit = LearnerSet::default().fit(&data, &grid).unwrap();
        let q = tilt_density(&fit.dose_density.density(data.covariates(0)).curve, delta);
        prop_assert!((grid.integrate(q.values()) - 1.0).abs() <= 1e-10);
    }
}
