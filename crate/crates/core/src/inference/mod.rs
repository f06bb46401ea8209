//! Confidence intervals, the mean test and the feature-significance tests.

mod distributions;
mod significance;

pub use distributions::{
    chisq_cdf, chisq_pdf, chisq_quantile, chisq_sf, gamma_p, gamma_q, ln_gamma, normal_cdf,
    normal_pdf, normal_quantile, normal_sf,
};
pub use significance::{
    compare_arms, randomization_battery, significance_test, BatteryEntry, BatteryTest, Comparison,
    SignificanceConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variance::{ensemble_variance, VarianceEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub theta_hat: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub variance_used: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn half_width(&self) -> f64 {
        self.upper - self.theta_hat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    MeanTest,
    ChiSqDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    /// Zero for the normal mean test.
    pub df: usize,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::invalid(format!(
            "{name} must lie in (0, 1), got {v}"
        )));
    }
    Ok(())
}

/// Normal interval centred on `theta_hat` with the ensemble variance of `est`.
pub fn confidence_interval(
    theta_hat: f64,
    est: &VarianceEstimate,
    level: f64,
) -> Result<ConfidenceInterval> {
    interval_with_variance(theta_hat, ensemble_variance(est), level)
}

pub fn interval_with_variance(
    theta_hat: f64,
    variance: f64,
    level: f64,
) -> Result<ConfidenceInterval> {
    check_open_unit("level", level)?;
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::invalid(format!(
            "variance {variance} must be finite and non-negative"
        )));
    }
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0)?;
    let half = z * variance.sqrt();
    Ok(ConfidenceInterval {
        theta_hat,
        lower: theta_hat - half,
        upper: theta_hat + half,
        level,
        variance_used: variance,
    })
}

/// Two-sided test of `theta = c` with `t = (theta_hat - c) / sd(theta_hat)`.
pub fn mean_test(theta_hat: f64, c: f64, est: &VarianceEstimate, alpha: f64) -> Result<TestResult> {
    check_open_unit("alpha", alpha)?;
    let variance = ensemble_variance(est);
    if !(variance > 0.0) {
        return Err(Error::invalid(
            "mean test needs a positive prediction variance",
        ));
    }
    let t = (theta_hat - c) / variance.sqrt();
    let critical_value = normal_quantile(1.0 - alpha / 2.0)?;
    Ok(TestResult {
        kind: TestKind::MeanTest,
        statistic: t,
        df: 0,
        critical_value,
        p_value: (2.0 * normal_sf(t.abs())).min(1.0),
        reject: t.abs() > critical_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variance::SamplingParams;

    fn est_with_variance(v: f64) -> VarianceEstimate {
        // k = n = m = 1 makes the ensemble variance zeta1 + zetakk.
        VarianceEstimate::new(v, 0.0, SamplingParams { n: 1, k: 1, m: 1 }, 2, 1)
    }

    #[test]
    fn zero_variance_gives_point_interval() {
        let ci = confidence_interval(3.0, &est_with_variance(0.0), 0.95).unwrap();
        assert_eq!((ci.lower, ci.upper), (3.0, 3.0));
        assert!(ci.contains(3.0));
    }

    #[test]
    fn interval_arithmetic() {
        let ci = interval_with_variance(20.0, 0.37, 0.95).unwrap();
        assert!((ci.lower - 18.808).abs() < 1e-3);
        assert!((ci.upper - 21.192).abs() < 1e-3);
        assert!(interval_with_variance(20.0, 0.37, 1.0).is_err());
        assert!(interval_with_variance(20.0, -1.0, 0.9).is_err());
    }

    #[test]
    fn mean_test_examples() {
        let est = est_with_variance(0.6083f64.powi(2));
        let at_c = mean_test(20.0, 20.0, &est, 0.05).unwrap();
        assert_eq!(at_c.statistic, 0.0);
        assert!(!at_c.reject);
        assert!((at_c.p_value - 1.0).abs() < 1e-12);

        let r = mean_test(20.0, 19.0, &est, 0.05).unwrap();
        assert!((r.statistic - 1.644).abs() < 1e-3);
        assert!(!r.reject);
        assert!(mean_test(20.0, 19.0, &est_with_variance(0.0), 0.05).is_err());
        assert!(mean_test(20.0, 19.0, &est, 0.0).is_err());
    }
}
