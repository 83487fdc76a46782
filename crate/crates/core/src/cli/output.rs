//! JSON result files, schema "zibbmr-result/1".

use serde::{Deserialize, Serialize};

use crate::inference::TestResult;
use crate::model::{Dataset, Theta};
use crate::saem::{AcceptanceSummary, ConditionalMoments, FitDiagnostics, FitResult};

use super::config::RunConfig;

pub const SCHEMA: &str = "zibbmr-result/1";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub path: Option<String>,
    pub n_subjects: usize,
    pub n_observations: usize,
    pub dim_x: usize,
    pub dim_z: usize,
}

impl DataSummary {
    pub fn new(data: &Dataset, path: Option<String>) -> Self {
        Self {
            path,
            n_subjects: data.n_subjects(),
            n_observations: data.n_observations(),
            dim_x: data.dim_x,
            dim_z: data.dim_z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoglikOutput {
    pub value: f64,
    pub mc_se: f64,
    pub nu: f64,
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub iterations: usize,
    pub initial: Vec<f64>,
    #[serde(rename = "final")]
    pub last: Vec<f64>,
    pub final_drift: Vec<f64>,
    /// Every 50th iterate (and the last), as (iteration, θ) pairs.
    pub checkpoints: Vec<(usize, Vec<f64>)>,
}

impl TrajectorySummary {
    pub fn new(fit: &FitResult) -> Self {
        let traj = &fit.trajectory;
        let n = traj.len() - 1;
        let mut checkpoints: Vec<(usize, Vec<f64>)> = traj
            .iter()
            .enumerate()
            .filter(|(q, _)| q % 50 == 0)
            .map(|(q, v)| (q, v.clone()))
            .collect();
        if n % 50 != 0 {
            checkpoints.push((n, traj[n].clone()));
        }
        Self {
            iterations: n,
            initial: traj[0].clone(),
            last: traj[n].clone(),
            final_drift: fit.diagnostics.final_drift.clone(),
            checkpoints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub schema: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub data: DataSummary,
    pub init_theta: Theta,
    pub theta: Theta,
    pub parameters: Vec<ParamEstimate>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub loglik: Option<LoglikOutput>,
    pub acceptance: AcceptanceSummary,
    pub trajectory: TrajectorySummary,
    pub moments: ConditionalMoments,
    pub diagnostics: FitDiagnostics,
}

impl FitOutput {
    pub fn new(
        fit: &FitResult,
        config: &RunConfig,
        data: DataSummary,
        init_theta: &Theta,
        loglik: Option<LoglikOutput>,
    ) -> Self {
        let values = fit.theta.to_vec();
        let parameters = fit
            .names
            .iter()
            .enumerate()
            .map(|(k, name)| ParamEstimate {
                name: name.clone(),
                estimate: values[k],
                se: fit.se.as_ref().map(|s| s[k]),
            })
            .collect();
        Self {
            schema: SCHEMA.into(),
            version: VERSION.into(),
            command: "fit".into(),
            seed: config.seed,
            config: config.clone(),
            data,
            init_theta: init_theta.clone(),
            theta: fit.theta.clone(),
            parameters,
            covariance: fit.covariance.as_ref().map(|c| c.to_rows()),
            loglik,
            acceptance: fit.acceptance.clone(),
            trajectory: TrajectorySummary::new(fit),
            moments: fit.moments.clone(),
            diagnostics: fit.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoglikFileOutput {
    pub schema: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub data: DataSummary,
    pub theta: Theta,
    pub loglik: LoglikOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTest {
    pub parameter: String,
    /// Absent when standard errors were unavailable.
    pub result: Option<TestResult>,
    pub unavailable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutput {
    pub schema: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub data: DataSummary,
    pub null: Vec<String>,
    pub full: Vec<ParamEstimate>,
    pub reduced: Vec<ParamEstimate>,
    pub loglik_full: LoglikOutput,
    pub loglik_reduced: LoglikOutput,
    pub wald: Vec<NamedTest>,
    pub lrt: TestResult,
}
