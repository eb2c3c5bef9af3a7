//! The two benchmark data-generating processes.
//!
//! `X ~ U(0,1)^10`, `P(A>0 | X) = 0.7 + Σ_j (-0.12 + 0.02 j) X_j`,
//! `D | X ~ Beta(exp(Xλ₁), exp(Xλ₂))`, and
//! `ΔY ~ N(1(A=0) Xγ₁ + 1(A>0)(0.5 D + Xγ₂), 1)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::Serialize;
use statrs::function::beta::ln_beta;

use super::SimulationError;
use crate::data::PanelDataset;
use crate::rng::{stream_rng, streams};

pub const N_COVARIATES: usize = 10;

/// Smallest sample size accepted by [`simulate_scenario`].
pub const MIN_SAMPLE_SIZE: usize = 100;

/// Effect of one unit of dose on the outcome trend.
pub const DOSE_SLOPE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scenario {
    /// Symmetric dose density.
    One,
    /// Dose density skewed toward small doses.
    Two,
}

impl TryFrom<u8> for Scenario {
    type Error = SimulationError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            other => Err(SimulationError::UnknownScenario(other)),
        }
    }
}

impl Scenario {
    pub fn number(self) -> u8 {
        match self {
            Self::One => 1,
            Self::Two => 2,
        }
    }

    pub fn parameters(self) -> DgpParameters {
        let (lambda1, lambda2) = match self {
            Self::One => (linspace(-0.2, 0.2), linspace(-0.2, 0.2)),
            Self::Two => (linspace(-0.1, 0.5), linspace(0.3, 0.7)),
        };
        DgpParameters {
            lambda1,
            lambda2,
            gamma1: linspace(-2.0, 2.0),
            gamma2: linspace(-2.0, 2.0),
        }
    }
}

/// Ten equally spaced values from `lo` to `hi` inclusive.
fn linspace(lo: f64, hi: f64) -> [f64; N_COVARIATES] {
    let step = (hi - lo) / (N_COVARIATES - 1) as f64;
    std::array::from_fn(|j| if j == N_COVARIATES - 1 { hi } else { lo + step * j as f64 })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DgpParameters {
    pub lambda1: [f64; N_COVARIATES],
    pub lambda2: [f64; N_COVARIATES],
    pub gamma1: [f64; N_COVARIATES],
    pub gamma2: [f64; N_COVARIATES],
}

impl DgpParameters {
    pub fn propensity(&self, x: &[f64]) -> f64 {
        0.7 + x
            .iter()
            .enumerate()
            .map(|(j, v)| (-0.12 + 0.02 * (j + 1) as f64) * v)
            .sum::<f64>()
    }

    /// Shape parameters of the dose law given `x`.
    pub fn beta_shapes(&self, x: &[f64]) -> (f64, f64) {
        (dot(x, &self.lambda1).exp(), dot(x, &self.lambda2).exp())
    }

    pub fn mu_treated(&self, dose: f64, x: &[f64]) -> f64 {
        DOSE_SLOPE * dose + dot(x, &self.gamma2)
    }

    pub fn mu_untreated(&self, x: &[f64]) -> f64 {
        dot(x, &self.gamma1)
    }
}

/// Log density of `Beta(a, b)` at `d` in (0, 1).
pub fn beta_log_density(a: f64, b: f64, d: f64) -> f64 {
    (a - 1.0) * d.ln() + (b - 1.0) * (-d).ln_1p() - ln_beta(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.n < MIN_SAMPLE_SIZE {
            return Err(SimulationError::SampleTooSmall(self.n));
        }
        Ok(())
    }
}

pub fn simulate_scenario(spec: &ScenarioSpec) -> Result<PanelDataset, SimulationError> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, streams::DATA);
    simulate_with_rng(spec.scenario, spec.n, &mut rng)
}

/// Draw `n` units from `scenario` using `rng`.
pub fn simulate_with_rng<R: Rng + ?Sized>(
    scenario: Scenario,
    n: usize,
    rng: &mut R,
) -> Result<PanelDataset, SimulationError> {
    let params = scenario.parameters();
    let mut x = Vec::with_capacity(n * N_COVARIATES);
    let mut a = Vec::with_capacity(n);
    let mut dy = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: [f64; N_COVARIATES] = std::array::from_fn(|_| rng.random::<f64>());
        let treated = rng.random::<f64>() < params.propensity(&xi);
        let (mean, dose) = if treated {
            let (alpha, beta) = params.beta_shapes(&xi);
            let dose = sample_beta(alpha, beta, rng);
            (params.mu_treated(dose, &xi), dose)
        } else {
            (params.mu_untreated(&xi), 0.0)
        };
        let noise: f64 = StandardNormal.sample(rng);
        x.extend_from_slice(&xi);
        a.push(dose);
        dy.push(mean + noise);
    }
    let names = (1..=N_COVARIATES).map(|j| format!("x{j}")).collect();
    Ok(PanelDataset::from_changes(dy, a, x, names)?)
}

/// `G₁ / (G₁ + G₂)` with `G₁ ~ Γ(α)`, `G₂ ~ Γ(β)`; redrawn on underflow to 0.
fn sample_beta<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    let ga = Gamma::new(alpha, 1.0).expect("positive shape");
    let gb = Gamma::new(beta, 1.0).expect("positive shape");
    loop {
        let u: f64 = ga.sample(rng);
        let v: f64 = gb.sample(rng);
        let d = u / (u + v);
        if d > 0.0 && d <= 1.0 {
            return d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn coefficient_vectors() {
        let p = Scenario::One.parameters();
        assert_abs_diff_eq!(p.lambda1[1], -0.2 + 0.4 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.lambda1[1], -0.156, epsilon = 1e-3);
        assert_eq!(p.lambda1[9], 0.2);
        assert_abs_diff_eq!(p.gamma1[1], -1.556, epsilon = 1e-3);
        let p = Scenario::Two.parameters();
        assert_abs_diff_eq!(p.lambda1[1], -0.033, epsilon = 1e-3);
        assert_abs_diff_eq!(p.lambda2[1], 0.344, epsilon = 1e-3);
        assert_eq!(p.lambda2[9], 0.7);
    }

    #[test]
    fn propensity_extremes() {
        let p = Scenario::One.parameters();
        // negative coefficients on x1..x5 sum to -0.30, positive on x7..x10 to +0.20
        let low: Vec<f64> = (1..=10).map(|j| if j <= 5 { 1.0 } else { 0.0 }).collect();
        let high: Vec<f64> = (1..=10).map(|j| if j >= 7 { 1.0 } else { 0.0 }).collect();
        assert_abs_diff_eq!(p.propensity(&low), 0.40, epsilon = 1e-12);
        assert_abs_diff_eq!(p.propensity(&high), 0.90, epsilon = 1e-12);
        assert_abs_diff_eq!(p.propensity(&[0.5; 10]), 0.65, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn propensity_stays_in_range(x in proptest::array::uniform10(0.0f64..=1.0)) {
            for s in [Scenario::One, Scenario::Two] {
                let p = s.parameters();
                let pi = p.propensity(&x);
                prop_assert!((0.40 - 1e-12..=0.90 + 1e-12).contains(&pi));
                let (a, b) = p.beta_shapes(&x);
                prop_assert!(a > 0.0 && b > 0.0);
            }
        }
    }

    #[test]
    fn rejects_small_samples() {
        let spec = ScenarioSpec { scenario: Scenario::One, n: 99, seed: 1 };
        assert!(matches!(simulate_scenario(&spec), Err(SimulationError::SampleTooSmall(99))));
        assert!(Scenario::try_from(3).is_err());
    }

    #[test]
    fn large_sample_moments() {
        let spec = ScenarioSpec { scenario: Scenario::One, n: 100_000, seed: 11 };
        let data = simulate_scenario(&spec).unwrap();
        let share = data.treated_count() as f64 / data.len() as f64;
        assert_abs_diff_eq!(share, 0.65, epsilon = 0.02);
        let treated = data.treated_rows();
        let mean_dose = treated.iter().map(|&i| data.treatment()[i]).sum::<f64>() / treated.len() as f64;
        assert_abs_diff_eq!(mean_dose, 0.5, epsilon = 0.01);
        assert!(treated.iter().all(|&i| data.treatment()[i] > 0.0 && data.treatment()[i] <= 1.0));
        assert!(data.y0().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_data() {
        let spec = ScenarioSpec { scenario: Scenario::Two, n: 300, seed: 5 };
        let a = simulate_scenario(&spec).unwrap();
        let b = simulate_scenario(&spec).unwrap();
        assert_eq!(a.dy(), b.dy());
        assert_eq!(a.treatment(), b.treatment());
    }

    #[test]
    fn beta_density_integrates_to_one() {
        let m = 20_000;
        let total: f64 = (0..m)
            .map(|i| beta_log_density(2.5, 1.7, (i as f64 + 0.5) / m as f64).exp() / m as f64)
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }
}
