//! Simulation settings, data generation, performance metrics and the
//! replication runners for parameter recovery and Type-I error.

use std::io::Write;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{lrt, wald_test, TestResult};
use crate::likelihood::{loglik_importance, ISConfig};
use crate::model::{dot, Dataset, Observation, ParamLayout, Subject, Theta};
use crate::numerics::rng::{sample_beta, sample_normal, splitmix64, Purpose, RngStream};
use crate::numerics::special::expit;
use crate::saem::{fit, FitConfig, FitDiagnostics, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CovariatePlan {
    /// One binary covariate X = Z: 0 for the first N/2 subjects, 1 otherwise.
    BinaryHalf,
    /// The binary covariate plus X₂ = Z₂ ~ N(mean, sd²), drawn per observation.
    BinaryHalfPlusNormal { mean: f64, sd: f64 },
}

impl CovariatePlan {
    pub fn dim(&self) -> usize {
        match self {
            CovariatePlan::BinaryHalf => 1,
            CovariatePlan::BinaryHalfPlusNormal { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhiLaw {
    Fixed {
        value: f64,
    },
    /// One draw per dataset.
    Uniform {
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub id: u8,
    /// When `phi_law` is random, `theta_true.phi` holds the law's mean.
    pub theta_true: Theta,
    pub n_subjects: usize,
    pub t_per_subject: usize,
    pub covariate_plan: CovariatePlan,
    pub s_range: (u32, u32),
    pub phi_law: PhiLaw,
    /// Default starting point for SAEM.
    pub theta_init: Theta,
    /// Default chain count.
    pub chains: usize,
}

impl SettingSpec {
    pub fn validate(&self) -> Result<()> {
        self.theta_true.validate()?;
        self.theta_init.validate()?;
        let d = self.covariate_plan.dim();
        if self.theta_true.alpha.len() != d || self.theta_true.beta.len() != d {
            return Err(Error::Config(
                "covariate plan does not match the coefficient dimensions".into(),
            ));
        }
        if self.theta_init.layout() != self.theta_true.layout() {
            return Err(Error::Config(
                "initial and true theta have different shapes".into(),
            ));
        }
        if self.n_subjects == 0 || self.t_per_subject == 0 {
            return Err(Error::Config(
                "need at least one subject and one occasion".into(),
            ));
        }
        if self.s_range.0 > self.s_range.1 {
            return Err(Error::Config(format!(
                "empty trial range {:?}",
                self.s_range
            )));
        }
        match self.phi_law {
            PhiLaw::Fixed { value } if value > 0.0 => Ok(()),
            PhiLaw::Uniform { lo, hi } if lo > 0.0 && lo <= hi => Ok(()),
            other => Err(Error::Config(format!("invalid phi law {other:?}"))),
        }
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

/// The four built-in simulation settings.
pub fn builtin_setting(id: u8) -> Result<SettingSpec> {
    let init_12 = Theta {
        phi: 18.0,
        a: -0.3,
        b: 0.2,
        alpha: vec![0.8],
        beta: vec![0.1],
        sigma1_sq: sq(0.48),
        sigma2_sq: sq(0.72),
    };
    let init_34 = Theta {
        phi: 6.0,
        a: 0.4,
        b: -0.7,
        alpha: vec![0.3, -0.2],
        beta: vec![0.2, 0.1],
        sigma1_sq: sq(0.28),
        sigma2_sq: sq(0.61),
    };
    let spec = match id {
        1 => SettingSpec {
            id,
            theta_true: Theta {
                phi: 6.4,
                a: -0.5,
                b: -0.5,
                alpha: vec![0.5],
                beta: vec![0.5],
                sigma1_sq: sq(0.7),
                sigma2_sq: sq(0.5),
            },
            n_subjects: 50,
            t_per_subject: 10,
            covariate_plan: CovariatePlan::BinaryHalf,
            s_range: (200, 800),
            phi_law: PhiLaw::Fixed { value: 6.4 },
            theta_init: init_12,
            chains: 5,
        },
        2 => SettingSpec {
            id,
            theta_true: Theta {
                phi: 10.4,
                a: -0.5,
                b: 0.5,
                alpha: vec![0.5],
                beta: vec![-0.5],
                sigma1_sq: sq(1.4),
                sigma2_sq: sq(0.8),
            },
            n_subjects: 50,
            t_per_subject: 10,
            covariate_plan: CovariatePlan::BinaryHalf,
            s_range: (200, 800),
            phi_law: PhiLaw::Fixed { value: 10.4 },
            theta_init: init_12,
            chains: 5,
        },
        3 => SettingSpec {
            id,
            theta_true: Theta {
                phi: 12.3,
                a: -1.8,
                b: -0.9,
                alpha: vec![0.8, -0.7],
                beta: vec![0.6, -0.9],
                sigma1_sq: sq(1.35),
                sigma2_sq: sq(1.28),
            },
            n_subjects: 50,
            t_per_subject: 10,
            covariate_plan: CovariatePlan::BinaryHalfPlusNormal { mean: 2.0, sd: 1.0 },
            s_range: (200, 800),
            phi_law: PhiLaw::Fixed { value: 12.3 },
            theta_init: init_34,
            chains: 5,
        },
        4 => SettingSpec {
            id,
            theta_true: Theta {
                phi: 6.0,
                a: 0.5,
                b: -0.5,
                alpha: vec![0.0, -0.5],
                beta: vec![0.0, 0.5],
                sigma1_sq: sq(0.7),
                sigma2_sq: sq(0.5),
            },
            n_subjects: 30,
            t_per_subject: 10,
            covariate_plan: CovariatePlan::BinaryHalfPlusNormal { mean: 1.0, sd: 1.0 },
            s_range: (200, 800),
            phi_law: PhiLaw::Uniform { lo: 2.0, hi: 10.0 },
            theta_init: init_34,
            chains: 10,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown setting {other}; expected 1, 2, 3 or 4"
            )))
        }
    };
    Ok(spec)
}

/// Simulate one dataset. Returns the data and the θ actually used (φ drawn
/// when the law is random).
pub fn generate_dataset(spec: &SettingSpec, stream: &mut RngStream) -> Result<(Dataset, Theta)> {
    spec.validate()?;
    let mut theta = spec.theta_true.clone();
    theta.phi = match spec.phi_law {
        PhiLaw::Fixed { value } => value,
        PhiLaw::Uniform { lo, hi } => lo + (hi - lo) * stream.uniform(),
    };
    let g = theta.g();
    let half = spec.n_subjects / 2;
    let mut subjects = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let [ai, bi] = sample_normal(stream, theta.mu(), &g)?;
        let x1 = if i < half { 0.0 } else { 1.0 };
        let mut observations = Vec::with_capacity(spec.t_per_subject);
        for t in 0..spec.t_per_subject {
            let cov = match spec.covariate_plan {
                CovariatePlan::BinaryHalf => vec![x1],
                CovariatePlan::BinaryHalfPlusNormal { mean, sd } => {
                    vec![x1, mean + sd * stream.standard_normal()]
                }
            };
            let s = stream.uniform_int(spec.s_range.0 as i64, spec.s_range.1 as i64)? as u32;
            let p = expit(ai + dot(&cov, &theta.alpha));
            let u = expit(bi + dot(&cov, &theta.beta));
            let y = if stream.uniform() < p {
                let w = sample_beta(stream, u * theta.phi, (1.0 - u) * theta.phi)?;
                stream.binomial(s, w)?
            } else {
                0
            };
            observations.push(Observation::new(y, s, cov.clone(), cov, t as i64 + 1)?);
        }
        subjects.push(Subject {
            id: format!("s{:03}", i + 1),
            observations,
        });
    }
    let d = spec.covariate_plan.dim();
    Ok((Dataset::new(subjects, d, d)?, theta))
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub parameter: String,
    pub true_value: f64,
    pub bias: f64,
    pub rmse: f64,
    pub mae: f64,
    pub n_replicates: usize,
}

/// Parameter names and values on the reporting scale: σ instead of σ².
pub fn reporting_values(theta: &Theta) -> (Vec<String>, Vec<f64>) {
    let layout = theta.layout();
    let mut names = layout.names();
    let mut v = theta.to_vec();
    let (i1, i2) = (layout.sigma1_sq(), layout.sigma2_sq());
    names[i1] = "sigma1".into();
    names[i2] = "sigma2".into();
    v[i1] = v[i1].sqrt();
    v[i2] = v[i2].sqrt();
    (names, v)
}

/// Metrics over (estimate, truth) pairs; truths may differ per replicate.
/// The reported true value is the mean truth.
pub fn compute_metrics_paired(pairs: &[(Theta, Theta)]) -> Result<Vec<MetricRow>> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::NoInformation("no estimates to summarize".into()))?;
    let layout = first.1.layout();
    if pairs
        .iter()
        .any(|(e, t)| e.layout() != layout || t.layout() != layout)
    {
        return Err(Error::shape(
            "estimates and truths have inconsistent shapes",
        ));
    }
    let (names, _) = reporting_values(&first.1);
    let r = pairs.len() as f64;
    let mut rows = Vec::with_capacity(names.len());
    let reported: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .iter()
        .map(|(e, t)| (reporting_values(e).1, reporting_values(t).1))
        .collect();
    for (k, name) in names.into_iter().enumerate() {
        let (mut sum, mut sum2, mut sum_abs, mut tv) = (0.0, 0.0, 0.0, 0.0);
        for (e, t) in &reported {
            let d = e[k] - t[k];
            sum += d;
            sum2 += d * d;
            sum_abs += d.abs();
            tv += t[k];
        }
        rows.push(MetricRow {
            parameter: name,
            true_value: tv / r,
            bias: sum / r,
            rmse: (sum2 / r).sqrt(),
            mae: sum_abs / r,
            n_replicates: pairs.len(),
        });
    }
    Ok(rows)
}

pub fn compute_metrics(estimates: &[Theta], theta_true: &Theta) -> Result<Vec<MetricRow>> {
    let pairs: Vec<(Theta, Theta)> = estimates
        .iter()
        .map(|e| (e.clone(), theta_true.clone()))
        .collect();
    compute_metrics_paired(&pairs)
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    setting: &'a str,
    parameter: &'a str,
    #[serde(rename = "true")]
    true_value: f64,
    bias: f64,
    rmse: f64,
    mae: f64,
    n_reps: usize,
    n_fail: usize,
}

/// Metrics table as CSV: setting, parameter, true, bias, rmse, mae, n_reps, n_fail.
pub fn write_metrics_csv<W: Write>(
    out: W,
    setting: &str,
    rows: &[MetricRow],
    n_fail: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(CsvRow {
            setting,
            parameter: &r.parameter,
            true_value: r.true_value,
            bias: r.bias,
            rmse: r.rmse,
            mae: r.mae,
            n_reps: r.n_replicates,
            n_fail,
        })?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Replication runners
// ---------------------------------------------------------------------------

/// Seed for the SAEM run of replicate `rep`.
pub fn replicate_seed(seed: u64, rep: usize) -> u64 {
    splitmix64(seed ^ splitmix64(rep as u64 ^ ((Purpose::Replicate as u64) << 56)))
}

pub fn replicate_stream(seed: u64, rep: usize) -> RngStream {
    RngStream::for_purpose(seed, Purpose::Generate, rep as u64, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub theta_true: Theta,
    pub theta_hat: Option<Theta>,
    pub se: Option<Vec<f64>>,
    pub diagnostics: Option<FitDiagnostics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub setting: u8,
    pub metrics: Vec<MetricRow>,
    pub records: Vec<ReplicateRecord>,
    pub n_fail: usize,
}

fn failure_guard(n_fail: usize, total: usize) -> Result<()> {
    if 2 * n_fail > total {
        return Err(Error::TooManyFailures {
            failed: n_fail,
            total,
        });
    }
    Ok(())
}

/// Generate and fit `n_reps` independent datasets. `fit_config.seed` is
/// replaced per replicate by a value derived from `seed`.
pub fn run_replications(
    spec: &SettingSpec,
    fit_config: &FitConfig,
    n_reps: usize,
    seed: u64,
) -> Result<ReplicationOutcome> {
    spec.validate()?;
    if n_reps == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    let records: Vec<ReplicateRecord> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut stream = replicate_stream(seed, rep);
            let (data, truth) = match generate_dataset(spec, &mut stream) {
                Ok(v) => v,
                Err(e) => {
                    return ReplicateRecord {
                        index: rep,
                        theta_true: spec.theta_true.clone(),
                        theta_hat: None,
                        se: None,
                        diagnostics: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            let cfg = FitConfig {
                seed: replicate_seed(seed, rep),
                ..fit_config.clone()
            };
            match fit(&data, &spec.theta_init, &cfg) {
                Ok(r) => ReplicateRecord {
                    index: rep,
                    theta_true: truth,
                    theta_hat: Some(r.theta),
                    se: r.se,
                    diagnostics: Some(r.diagnostics),
                    error: None,
                },
                Err(e) => {
                    warn!("setting {} replicate {rep} failed: {e}", spec.id);
                    ReplicateRecord {
                        index: rep,
                        theta_true: truth,
                        theta_hat: None,
                        se: None,
                        diagnostics: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let n_fail = records.iter().filter(|r| r.theta_hat.is_none()).count();
    failure_guard(n_fail, n_reps)?;
    let pairs: Vec<(Theta, Theta)> = records
        .iter()
        .filter_map(|r| {
            r.theta_hat
                .as_ref()
                .map(|h| (h.clone(), r.theta_true.clone()))
        })
        .collect();
    let metrics = compute_metrics_paired(&pairs)?;
    info!(
        "setting {}: {} replicates, {} failed",
        spec.id, n_reps, n_fail
    );
    Ok(ReplicationOutcome {
        setting: spec.id,
        metrics,
        records,
        n_fail,
    })
}

/// Initial value for the reduced model: the full initial value with the
/// first α and β coordinates removed.
pub fn reduce_theta(theta: &Theta, x_cols: &[usize], z_cols: &[usize]) -> Theta {
    let mut out = theta.clone();
    out.alpha = theta
        .alpha
        .iter()
        .enumerate()
        .filter(|(j, _)| !x_cols.contains(j))
        .map(|(_, v)| *v)
        .collect();
    out.beta = theta
        .beta
        .iter()
        .enumerate()
        .filter(|(j, _)| !z_cols.contains(j))
        .map(|(_, v)| *v)
        .collect();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type1Record {
    pub index: usize,
    pub alpha1: f64,
    pub alpha1_se: Option<f64>,
    pub beta1: f64,
    pub beta1_se: Option<f64>,
    pub loglik_full: f64,
    pub loglik_full_se: f64,
    pub loglik_reduced: f64,
    pub loglik_reduced_se: f64,
    /// Wald tests are absent when the information matrix could not be inverted.
    pub wald_alpha1: Option<TestResult>,
    pub wald_beta1: Option<TestResult>,
    pub lrt_joint: TestResult,
    pub se_unavailable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRow {
    pub test: String,
    pub level: f64,
    pub rejections: usize,
    pub n: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type1Outcome {
    pub rows: Vec<RejectionRow>,
    pub records: Vec<Type1Record>,
    pub failures: Vec<(usize, String)>,
}

/// Full and reduced fit, log-likelihoods and tests for one replicate dataset.
pub fn type1_replicate(
    data: &Dataset,
    theta_init: &Theta,
    fit_config: &FitConfig,
    is_cfg: &ISConfig,
    seed: u64,
    index: usize,
) -> Result<Type1Record> {
    let full = fit(data, theta_init, fit_config)?;
    let reduced_data = data.drop_columns(&[0], &[0]);
    let reduced = fit(
        &reduced_data,
        &reduce_theta(theta_init, &[0], &[0]),
        fit_config,
    )?;
    let ll = |r: &FitResult, d: &Dataset, which: u64| {
        let stream = RngStream::for_purpose(seed, Purpose::Loglik, index as u64, which);
        loglik_importance(d, &r.theta, &r.moments, is_cfg, &stream)
    };
    let (ll_f, se_f) = ll(&full, data, 0)?;
    let (ll_r, se_r) = ll(&reduced, &reduced_data, 1)?;
    let layout: ParamLayout = full.theta.layout();
    let (ia, ib) = (layout.alpha_range().start, layout.beta_range().start);
    let (a1, b1) = (full.theta.alpha[0], full.theta.beta[0]);
    let (alpha1_se, beta1_se) = match &full.se {
        Some(se) => (Some(se[ia]), Some(se[ib])),
        None => {
            warn!("replicate {index}: no standard errors, Wald tests skipped");
            (None, None)
        }
    };
    let wald = |est: f64, se: Option<f64>| se.map(|s| wald_test(est, s, 0.0)).transpose();
    Ok(Type1Record {
        index,
        alpha1: a1,
        alpha1_se,
        beta1: b1,
        beta1_se,
        loglik_full: ll_f,
        loglik_full_se: se_f,
        loglik_reduced: ll_r,
        loglik_reduced_se: se_r,
        wald_alpha1: wald(a1, alpha1_se)?,
        wald_beta1: wald(b1, beta1_se)?,
        lrt_joint: lrt(ll_f, ll_r, 2, (se_f * se_f + se_r * se_r).sqrt())?,
        se_unavailable: full.diagnostics.se_unavailable.clone(),
    })
}

/// Rejection rates of the Wald tests for α₁ = 0 and β₁ = 0 and the joint LRT.
/// Each test counts only the replicates where it could be computed.
pub fn rejection_rows(records: &[Type1Record], levels: &[f64]) -> Vec<RejectionRow> {
    type Pick = fn(&Type1Record) -> Option<f64>;
    let mut rows = Vec::new();
    for &level in levels {
        for (name, pick) in [
            (
                "alpha_1",
                (|r: &Type1Record| r.wald_alpha1.as_ref().map(|t| t.p_value)) as Pick,
            ),
            ("beta_1", |r: &Type1Record| {
                r.wald_beta1.as_ref().map(|t| t.p_value)
            }),
            ("joint", |r: &Type1Record| Some(r.lrt_joint.p_value)),
        ] {
            let p: Vec<f64> = records.iter().filter_map(pick).collect();
            let n = p.len();
            let rejections = p.iter().filter(|&&v| v < level).count();
            rows.push(RejectionRow {
                test: name.into(),
                level,
                rejections,
                n,
                rate: if n > 0 {
                    rejections as f64 / n as f64
                } else {
                    f64::NAN
                },
            });
        }
    }
    rows
}

pub fn type1_study(
    spec: &SettingSpec,
    fit_config: &FitConfig,
    is_cfg: &ISConfig,
    n_reps: usize,
    levels: &[f64],
    seed: u64,
) -> Result<Type1Outcome> {
    spec.validate()?;
    if spec.theta_true.alpha.first() != Some(&0.0) || spec.theta_true.beta.first() != Some(&0.0) {
        return Err(Error::Config(
            "type-I study needs alpha_1 = beta_1 = 0 in truth".into(),
        ));
    }
    if n_reps == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    let results: Vec<std::result::Result<Type1Record, (usize, String)>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let run = || -> Result<Type1Record> {
                let mut stream = replicate_stream(seed, rep);
                let (data, _) = generate_dataset(spec, &mut stream)?;
                let cfg = FitConfig {
                    seed: replicate_seed(seed, rep),
                    ..fit_config.clone()
                };
                type1_replicate(&data, &spec.theta_init, &cfg, is_cfg, seed, rep)
            };
            run().map_err(|e| {
                warn!("type-I replicate {rep} failed: {e}");
                (rep, e.to_string())
            })
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    failure_guard(failures.len(), n_reps)?;
    Ok(Type1Outcome {
        rows: rejection_rows(&records, levels),
        records,
        failures,
    })
}
