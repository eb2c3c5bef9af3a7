//! Repeated-sampling studies: bias, coverage and variance calibration of the
//! cross-fitted tilt estimator across a grid of increments.

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use super::dgp::{simulate_with_rng, Scenario, MIN_SAMPLE_SIZE};
use super::oracle::{oracle_truth, OracleFitter, OracleTruth, MIN_ORACLE_DRAWS};
use super::SimulationError;
use crate::data::assign_folds;
use crate::estimators::{crossfit, CorrectionWeight, EstimatorOptions, OneStepTarget};
use crate::grid::{DoseGrid, DEFAULT_GRID_SIZE};
use crate::interventions::InterventionSpec;
use crate::nuisance::{LearnerSet, NuisanceFitter};
use crate::rng::{derive_seed, stream_rng, streams};

/// Smallest replicate count accepted by [`run_study`].
pub const MIN_REPLICATES: usize = 50;

/// Source of the nuisance functions in each replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyNuisance {
    Learned(LearnerSet),
    /// True functions, with an optional constant error in the untreated
    /// outcome regression.
    Oracle { mu_untreated_shift: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub deltas: Vec<f64>,
    pub n: usize,
    pub replicates: usize,
    pub folds: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub ci_level: f64,
    pub weight: CorrectionWeight,
    pub nuisance: StudyNuisance,
    pub oracle_draws: usize,
}

impl StudyConfig {
    pub fn new(scenario: Scenario, deltas: Vec<f64>, n: usize, replicates: usize, folds: usize, seed: u64) -> Self {
        Self {
            scenario,
            deltas,
            n,
            replicates,
            folds,
            seed,
            grid_size: DEFAULT_GRID_SIZE,
            ci_level: 0.95,
            weight: CorrectionWeight::Odds,
            nuisance: StudyNuisance::Learned(LearnerSet::default()),
            oracle_draws: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.n < MIN_SAMPLE_SIZE {
            return Err(SimulationError::SampleTooSmall(self.n));
        }
        if self.replicates < MIN_REPLICATES {
            return Err(SimulationError::TooFewReplicates(self.replicates));
        }
        if self.oracle_draws < MIN_ORACLE_DRAWS {
            return Err(SimulationError::TooFewOracleDraws(self.oracle_draws));
        }
        if self.deltas.is_empty() {
            return Err(SimulationError::EmptyDeltaGrid);
        }
        Ok(())
    }
}

/// Summary for one increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StudyRow {
    pub delta: f64,
    pub truth: f64,
    pub truth_mc_se: f64,
    pub mean_psi: f64,
    pub bias: f64,
    /// Monte Carlo standard error of `mean_psi`.
    pub mc_se: f64,
    pub coverage: f64,
    pub mean_se: f64,
    pub mean_sigma: f64,
    pub mean_sigma2: f64,
    /// `n` times the across-replicate variance of the estimates.
    pub n_var_psi: f64,
}

/// One replicate's estimate at one increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub delta: f64,
    pub psi_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub rows: Vec<StudyRow>,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
    #[serde(skip)]
    pub runtime: Duration,
}

impl StudyResult {
    pub fn row(&self, delta: f64) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.delta == delta)
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<(), SimulationError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "delta",
            "truth",
            "mean_psi",
            "bias",
            "mc_se",
            "coverage",
            "mean_sigma",
            "mean_sigma2",
            "n_var_psi",
            "replicates",
        ])?;
        for r in &self.rows {
            w.write_record(&[
                r.delta.to_string(),
                r.truth.to_string(),
                r.mean_psi.to_string(),
                r.bias.to_string(),
                r.mc_se.to_string(),
                r.coverage.to_string(),
                r.mean_sigma.to_string(),
                r.mean_sigma2.to_string(),
                r.n_var_psi.to_string(),
                self.config.replicates.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long format, one row per replicate and increment.
    pub fn write_plot_csv<W: Write>(&self, out: W) -> Result<(), SimulationError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replicate", "delta", "psi_hat", "ci_low", "ci_high", "truth"])?;
        for r in &self.records {
            w.write_record(&[
                r.replicate.to_string(),
                r.delta.to_string(),
                r.psi_hat.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.truth.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    psi: f64,
    se: f64,
    sigma2: f64,
    ci_low: f64,
    ci_high: f64,
}

/// Simulate `replicates` datasets, estimate the tilt effect at every
/// increment, and compare with the oracle truth. Replicate `r` draws its
/// data and folds from streams keyed by `(seed, r)`, so results do not
/// depend on scheduling.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult, SimulationError> {
    config.validate()?;
    let started = Instant::now();
    let truths: Vec<OracleTruth> = config
        .deltas
        .iter()
        .map(|&d| oracle_truth(config.scenario, &InterventionSpec::tilt(d), config.oracle_draws, config.seed))
        .collect::<Result<_, _>>()?;

    let learned;
    let oracle;
    let fitter: &dyn NuisanceFitter = match config.nuisance {
        StudyNuisance::Learned(set) => {
            learned = set;
            &learned
        }
        StudyNuisance::Oracle { mu_untreated_shift } => {
            oracle = OracleFitter::new(config.scenario).with_untreated_shift(mu_untreated_shift);
            &oracle
        }
    };
    let grid = DoseGrid::shared(config.grid_size)?;
    let targets: Vec<OneStepTarget> = config.deltas.iter().map(|&d| OneStepTarget::Tilt(d)).collect();
    let options = EstimatorOptions {
        grid_size: config.grid_size,
        ci_level: config.ci_level,
        weight: config.weight,
        retain_eif: false,
    };

    let draws: Vec<Vec<Draw>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(config.seed, streams::DATA + r as u64);
            let data = simulate_with_rng(config.scenario, config.n, &mut rng)?;
            let folds = assign_folds(&data, config.folds, derive_seed(config.seed, streams::FOLDS + r as u64))?;
            let results = crossfit(&data, &folds, fitter, &grid, &targets, &options)?;
            Ok(results
                .iter()
                .map(|e| Draw {
                    psi: e.psi_hat,
                    se: e.se,
                    sigma2: e.sigma2,
                    ci_low: e.ci_low,
                    ci_high: e.ci_high,
                })
                .collect())
        })
        .collect::<Result<_, SimulationError>>()?;

    let reps = config.replicates as f64;
    let mut rows = Vec::with_capacity(config.deltas.len());
    let mut records = Vec::with_capacity(config.deltas.len() * config.replicates);
    for (t, (&delta, truth)) in config.deltas.iter().zip(&truths).enumerate() {
        let column: Vec<Draw> = draws.iter().map(|d| d[t]).collect();
        let mean_psi = column.iter().map(|d| d.psi).sum::<f64>() / reps;
        let var_psi = column.iter().map(|d| (d.psi - mean_psi).powi(2)).sum::<f64>() / (reps - 1.0);
        let covered = column
            .iter()
            .filter(|d| d.ci_low <= truth.truth && truth.truth <= d.ci_high)
            .count();
        rows.push(StudyRow {
            delta,
            truth: truth.truth,
            truth_mc_se: truth.mc_se,
            mean_psi,
            bias: mean_psi - truth.truth,
            mc_se: (var_psi / reps).sqrt(),
            coverage: covered as f64 / reps,
            mean_se: column.iter().map(|d| d.se).sum::<f64>() / reps,
            mean_sigma: column.iter().map(|d| d.sigma2.sqrt()).sum::<f64>() / reps,
            mean_sigma2: column.iter().map(|d| d.sigma2).sum::<f64>() / reps,
            n_var_psi: config.n as f64 * var_psi,
        });
        records.extend(column.iter().enumerate().map(|(r, d)| ReplicateRecord {
            replicate: r,
            delta,
            psi_hat: d.psi,
            ci_low: d.ci_low,
            ci_high: d.ci_high,
            truth: truth.truth,
        }));
    }
    records.sort_by_key(|r| r.replicate);

    Ok(StudyResult {
        config: config.clone(),
        rows,
        records,
        runtime: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> StudyConfig {
        let mut config = StudyConfig::new(Scenario::One, vec![-1.0, 0.0, 1.0], 300, 50, 2, seed);
        config.oracle_draws = MIN_ORACLE_DRAWS;
        config
    }

    #[test]
    fn preconditions() {
        let mut config = small(1);
        config.replicates = 10;
        assert!(matches!(run_study(&config), Err(SimulationError::TooFewReplicates(10))));
        let mut config = small(1);
        config.n = 50;
        assert!(matches!(run_study(&config), Err(SimulationError::SampleTooSmall(50))));
    }

    #[test]
    fn summary_is_consistent_and_deterministic() {
        let a = run_study(&small(21)).unwrap();
        let b = run_study(&small(21)).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 150);
        for row in &a.rows {
            assert_eq!(row.bias, row.mean_psi - row.truth);
            assert!((0.0..=1.0).contains(&row.coverage));
        }
        let mut csv = Vec::new();
        a.write_summary_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("delta,truth,mean_psi,bias,mc_se,coverage,"));
    }
}
