//! Stochastic approximation EM for the zero-inflated beta-binomial mixed model.
//!
//! Each iteration runs the MH simulation step on every chain, updates the
//! sufficient statistics, conditional moments and Louis accumulators by
//! stochastic approximation, then maximizes: closed form for (a, b, σ₁², σ₂²),
//! Newton for (β, ln φ) and α, followed by smoothing.

mod mstep;
mod stats;

pub use mstep::{
    betabin_objective, mstep_betabin, mstep_logistic, smooth_params, MstepOutcome, PHI_FLOOR,
};
pub use stats::{
    mstep_gaussian, sa_update_stats, update_conditional_moments, update_louis, ConditionalMoments,
    LouisAccumulators, StepSchedule, SufficientStats, VARIANCE_FLOOR,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ParamLayout, RandomEffect, Theta};
use crate::numerics::{Mat2, SquareMatrix};
use crate::sampler::{
    adapt_omega, mh_sweep, AcceptTally, ChainState, KernelKind, KernelSchedule, SamplerMode,
};

/// How standard errors are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeMethod {
    Louis,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub schedule: StepSchedule,
    pub chains: usize,
    pub kernels: KernelSchedule,
    pub mode: SamplerMode,
    pub seed: u64,
    pub target_accept: f64,
    pub se_method: SeMethod,
    /// Window (in iterations) for the post-hoc drift diagnostic.
    pub drift_window: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            schedule: StepSchedule::default(),
            chains: 5,
            kernels: KernelSchedule::default(),
            mode: SamplerMode::Original,
            seed: 1,
            target_accept: 0.3,
            se_method: SeMethod::Louis,
            drift_window: 50,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        self.kernels.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub prior: Option<f64>,
    pub random_walk: Option<f64>,
    pub univariate: Option<f64>,
    pub final_omega: Vec<Mat2>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// |θ_K − θ_{K−w}| / (1 + |θ_K|) per parameter over the drift window.
    pub final_drift: Vec<f64>,
    pub betabin_nonconverged: usize,
    pub logistic_ridged: usize,
    pub logistic_nonconverged: usize,
    pub phi_floored: usize,
    pub se_unavailable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub theta: Theta,
    pub se: Option<Vec<f64>>,
    pub covariance: Option<SquareMatrix>,
    pub moments: ConditionalMoments,
    pub acceptance: AcceptanceSummary,
    /// θ⁽⁰⁾, θ⁽¹⁾, …, θ⁽ᴷ⁾ as flat vectors.
    pub trajectory: Vec<Vec<f64>>,
    pub diagnostics: FitDiagnostics,
    pub config: FitConfig,
}

impl FitResult {
    pub fn layout(&self) -> ParamLayout {
        self.theta.layout()
    }
}

fn check_finite(theta: &Theta, q: usize, trajectory: &[Vec<f64>]) -> Result<()> {
    let v = theta.to_vec();
    if let Some(k) = v.iter().position(|x| !x.is_finite()) {
        let mut trajectory = trajectory.to_vec();
        trajectory.push(v);
        return Err(Error::NonFinite {
            iteration: q,
            what: format!("parameter {}", theta.layout().names()[k]),
            trajectory,
        });
    }
    Ok(())
}

/// Run SAEM from `theta0` for the configured number of iterations.
pub fn fit(data: &Dataset, theta0: &Theta, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    theta0.validate()?;
    if data.dim_x != theta0.alpha.len() || data.dim_z != theta0.beta.len() {
        return Err(Error::shape(
            "dataset covariate dimensions do not match the initial theta",
        ));
    }
    let n = data.n_subjects();
    let layout = theta0.layout();
    let mut chains: Vec<ChainState> = (0..config.chains)
        .map(|l| ChainState::initialize(theta0, data, l, config.seed, config.mode))
        .collect::<Result<_>>()?;

    let mut theta = theta0.clone();
    let mut stats = SufficientStats::default();
    let mut moments = ConditionalMoments::zeros(n);
    let mut louis = LouisAccumulators::zeros(layout.len());
    let mut diag = FitDiagnostics::default();
    let mut trajectory = Vec::with_capacity(config.schedule.total() + 1);
    trajectory.push(theta.to_vec());
    let louis_from = config.schedule.k1.max(1);

    for q in 1..=config.schedule.total() {
        let gamma = config.schedule.gamma(q);

        // Simulation
        let sweeps: Vec<Result<()>> = chains
            .par_iter_mut()
            .map(|c| mh_sweep(&theta, data, c, &config.kernels, config.mode))
            .collect();
        for r in sweeps {
            r?;
        }
        for c in chains.iter_mut() {
            adapt_omega(c, config.target_accept, gamma);
        }
        let re: Vec<Vec<RandomEffect>> = chains.iter().map(|c| c.random_effects()).collect();

        // Stochastic approximation
        stats = sa_update_stats(&stats, &re, gamma);
        moments = update_conditional_moments(&moments, &re, gamma);

        // Maximization
        let (mu, g) = mstep_gaussian(&stats, n);
        let (beta_t, phi_t, bb) = mstep_betabin(data, &re, &theta.beta, theta.phi)?;
        if !bb.converged {
            diag.betabin_nonconverged += 1;
        }
        let (alpha_t, lg, ridged) = mstep_logistic(data, &re, &theta.alpha)?;
        diag.logistic_ridged += ridged as usize;
        diag.logistic_nonconverged += (!lg.converged) as usize;
        if !phi_t.is_finite() || alpha_t.iter().chain(&beta_t).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                iteration: q,
                what: "M-step maximizer".into(),
                trajectory,
            });
        }
        let (mut next, floored) = smooth_params(&theta, phi_t, &alpha_t, &beta_t, gamma);
        diag.phi_floored += floored as usize;
        next.a = mu[0];
        next.b = mu[1];
        next.sigma1_sq = g.0[0][0];
        next.sigma2_sq = g.0[1][1];
        check_finite(&next, q, &trajectory)?;
        theta = next;

        // Louis accumulators are fully overwritten while γ = 1, so only the
        // last unit-step iteration and the decreasing phase matter.
        if config.se_method == SeMethod::Louis && q >= louis_from {
            louis = update_louis(&louis, &theta, &re, data, gamma)?;
        }
        trajectory.push(theta.to_vec());
    }

    let (se, covariance) = match config.se_method {
        SeMethod::None => (None, None),
        SeMethod::Louis if config.schedule.total() == 0 => {
            diag.se_unavailable = Some("no iterations were run".into());
            (None, None)
        }
        SeMethod::Louis => match louis.covariance() {
            Ok(cov) => {
                let se: Vec<f64> = (0..cov.dim()).map(|k| cov[(k, k)].sqrt()).collect();
                (Some(se), Some(cov))
            }
            Err(e) => {
                diag.se_unavailable =
                    Some(format!("information matrix is not positive definite: {e}"));
                (None, None)
            }
        },
    };

    let w = config.drift_window.min(trajectory.len() - 1);
    let last = trajectory.last().expect("trajectory holds theta0");
    let earlier = &trajectory[trajectory.len() - 1 - w];
    diag.final_drift = last
        .iter()
        .zip(earlier)
        .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
        .collect();

    let mut total = AcceptTally::default();
    for c in &chains {
        total.merge(&c.total);
    }
    let acceptance = AcceptanceSummary {
        prior: total.rate(KernelKind::Prior),
        random_walk: total.rate(KernelKind::RandomWalk),
        univariate: total.rate(KernelKind::Univariate),
        final_omega: chains.iter().map(|c| c.omega).collect(),
    };

    Ok(FitResult {
        names: layout.names(),
        theta,
        se,
        covariance,
        moments,
        acceptance,
        trajectory,
        diagnostics: diag,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Observation, Subject};

    fn toy_data() -> Dataset {
        let subjects = (0..6)
            .map(|i| Subject {
                id: i.to_string(),
                observations: (0..4)
                    .map(|t| {
                        let y = ((i + t) % 4) as u32;
                        Observation::new(y, 5, vec![t as f64 / 4.0], vec![(i % 2) as f64], t as i64)
                            .unwrap()
                    })
                    .collect(),
            })
            .collect();
        Dataset::new(subjects, 1, 1).unwrap()
    }

    fn theta0() -> Theta {
        Theta {
            phi: 3.0,
            a: 0.5,
            b: 0.0,
            alpha: vec![0.0],
            beta: vec![0.0],
            sigma1_sq: 1.0,
            sigma2_sq: 1.0,
        }
    }

    #[test]
    fn zero_iterations_returns_start() {
        let cfg = FitConfig {
            schedule: StepSchedule { k1: 0, k2: 0 },
            ..Default::default()
        };
        let r = fit(&toy_data(), &theta0(), &cfg).unwrap();
        assert_eq!(r.theta, theta0());
        assert_eq!(r.trajectory.len(), 1);
        assert!(r.se.is_none());
    }

    #[test]
    fn short_run_is_finite_and_reproducible() {
        let cfg = FitConfig {
            schedule: StepSchedule { k1: 20, k2: 10 },
            chains: 2,
            ..Default::default()
        };
        let a = fit(&toy_data(), &theta0(), &cfg).unwrap();
        let b = fit(&toy_data(), &theta0(), &cfg).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.trajectory.len(), 31);
        assert!(a.theta.to_vec().iter().all(|v| v.is_finite()));
    }
}
