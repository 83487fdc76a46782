//! Wald and likelihood-ratio tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::special::{self, normal_cdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Wald,
    Lrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    /// z² for Wald tests, 2(ℓ_full − ℓ_reduced) clamped at zero for the LRT.
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub warning: Option<String>,
}

impl TestResult {
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Two-sided z-test of `estimate = null_value`.
pub fn wald_test(estimate: f64, se: f64, null_value: f64) -> Result<TestResult> {
    if !(se > 0.0 && se.is_finite()) {
        return Err(Error::domain(format!(
            "standard error must be positive, got {se}"
        )));
    }
    let z = (estimate - null_value) / se;
    // 2(1 − Φ(|z|)) = 2Φ(−|z|), which keeps precision in the tail.
    let p = (2.0 * normal_cdf(-z.abs())).min(1.0);
    Ok(TestResult {
        kind: TestKind::Wald,
        statistic: z * z,
        df: 1,
        p_value: p,
        warning: None,
    })
}

/// Likelihood-ratio test. `mc_se` is the combined Monte Carlo standard error
/// of the difference; a negative statistic within 3·`mc_se` is treated as noise
/// and clamped silently, beyond that it is clamped with a warning.
pub fn lrt(loglik_full: f64, loglik_reduced: f64, df: u32, mc_se: f64) -> Result<TestResult> {
    if df == 0 {
        return Err(Error::domain("LRT needs df >= 1"));
    }
    if !loglik_full.is_finite() || !loglik_reduced.is_finite() {
        return Err(Error::domain("log-likelihoods must be finite"));
    }
    let diff = loglik_full - loglik_reduced;
    let warning = (diff < -3.0 * mc_se.max(0.0)).then(|| {
        format!(
            "reduced model log-likelihood exceeds the full model by {:.4} (MC SE {:.4})",
            -diff, mc_se
        )
    });
    let statistic = (2.0 * diff).max(0.0);
    let p_value = chi_square_sf(statistic, df)?;
    Ok(TestResult {
        kind: TestKind::Lrt,
        statistic,
        df,
        p_value,
        warning,
    })
}

pub fn chi_square_sf(x: f64, df: u32) -> Result<f64> {
    special::chi_square_sf(x, df)
}
