use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::EstimatorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub sigma2: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Two-sided standard normal quantile for confidence level `level`.
pub fn normal_quantile(level: f64) -> Result<f64, EstimatorError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimatorError::InvalidCiLevel(level));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

/// `σ̂² = n⁻¹ Σ φ̂ᵢ²` from centered influence values, `se = σ̂ / √n`, and the
/// Wald interval around `psi_hat`. Cross-fitted influence values are centered
/// within their fold, so pooling over all units equals the fold-size-weighted
/// average of fold variances.
pub fn variance_plugin(
    eif_values: &[f64],
    n: usize,
    psi_hat: f64,
    level: f64,
) -> Result<VarianceEstimate, EstimatorError> {
    let z = normal_quantile(level)?;
    let sigma2 = eif_values.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let se = (sigma2 / n as f64).sqrt();
    Ok(VarianceEstimate {
        sigma2,
        se,
        ci_low: psi_hat - z * se,
        ci_high: psi_hat + z * se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_influence_gives_point_interval() {
        let v = variance_plugin(&[0.0; 10], 10, 0.3, 0.95).unwrap();
        assert_eq!(v.sigma2, 0.0);
        assert_eq!(v.ci_low, 0.3);
        assert_eq!(v.ci_high, 0.3);
    }

    #[test]
    fn alternating_signs() {
        let eif: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let v = variance_plugin(&eif, 100, 0.0, 0.95).unwrap();
        assert_abs_diff_eq!(v.sigma2, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.se, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(v.ci_high, 1.959963984540054 * 0.1, epsilon = 1e-9);
    }

    #[test]
    fn quantiles() {
        assert_abs_diff_eq!(normal_quantile(0.95).unwrap(), 1.959963984540054, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_quantile(0.90).unwrap(), 1.6448536269514722, epsilon = 1e-9);
        assert!(normal_quantile(1.0).is_err());
    }
}
