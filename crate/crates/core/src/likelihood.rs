//! Observed-data log-likelihood.
//!
//! `loglik_importance` is the production estimator: per subject, K draws from
//! a componentwise scaled Student-t centred at the conditional moments of φᵢ.
//! `loglik_quadrature` is an adaptive Gauss–Hermite evaluation used to check
//! it on small problems. The subject integrand factorizes into a part in aᵢ and
//! a part in bᵢ, so the tensor-product rule reduces to two 1-D rules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    betabin_log_pmf, clamp_prob, dot, log_prior_density, subject_log_lik, Dataset, RandomEffect,
    Subject, Theta,
};
use crate::numerics::quadrature::gauss_hermite;
use crate::numerics::rng::{sample_student_t, RngStream};
use crate::numerics::special::{expit, ln_gamma, log_sum_exp};
use crate::saem::ConditionalMoments;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ISConfig {
    pub nu: f64,
    pub k_samples: usize,
}

impl Default for ISConfig {
    fn default() -> Self {
        Self {
            nu: 5.0,
            k_samples: 500,
        }
    }
}

impl ISConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) || self.k_samples == 0 {
            return Err(Error::Config(format!(
                "need nu > 0 and K >= 1, got nu={}, K={}",
                self.nu, self.k_samples
            )));
        }
        Ok(())
    }
}

/// Per-subject importance-sampling output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectEstimate {
    pub log_p: f64,
    /// Delta-method standard error of `log_p`.
    pub se: f64,
}

fn ln_t_density(t: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p()
}

/// Importance-sampling estimate of ln p(Yᵢ; θ) for one subject.
pub fn subject_importance(
    theta: &Theta,
    subject: &Subject,
    center: [f64; 2],
    scale: [f64; 2],
    cfg: &ISConfig,
    stream: &mut RngStream,
) -> Result<SubjectEstimate> {
    if !(scale[0] > 0.0 && scale[1] > 0.0) {
        return Err(Error::domain(format!(
            "subject {}: proposal scales must be positive",
            subject.id
        )));
    }
    let k = cfg.k_samples;
    let mut lw = Vec::with_capacity(k);
    for _ in 0..k {
        let t0 = sample_student_t(stream, cfg.nu)?;
        let t1 = sample_student_t(stream, cfg.nu)?;
        let re = RandomEffect::new(center[0] + scale[0] * t0, center[1] + scale[1] * t1);
        let ln_q =
            ln_t_density(t0, cfg.nu) + ln_t_density(t1, cfg.nu) - scale[0].ln() - scale[1].ln();
        let v = subject_log_lik(theta, &re, subject)? + log_prior_density(theta, &re) - ln_q;
        lw.push(if v.is_nan() { f64::NEG_INFINITY } else { v });
    }
    let lse = log_sum_exp(&lw);
    if !lse.is_finite() {
        return Err(Error::ZeroEffectiveSample {
            subject: subject.id.clone(),
        });
    }
    let log_p = lse - (k as f64).ln();
    // Relative standard error of the mean weight, from weights scaled by their mean.
    let mean = 1.0 / k as f64;
    let var = lw
        .iter()
        .map(|l| (l - lse).exp() - mean)
        .map(|d| d * d)
        .sum::<f64>()
        / k as f64;
    let se = var.sqrt() / (k as f64).sqrt() / mean;
    Ok(SubjectEstimate { log_p, se })
}

/// Σᵢ ln p̂ᵢ with a combined Monte Carlo standard error. Subject i uses the
/// child stream `stream.child(i)`, so the result does not depend on thread count.
pub fn loglik_importance(
    data: &Dataset,
    theta: &Theta,
    moments: &ConditionalMoments,
    cfg: &ISConfig,
    stream: &RngStream,
) -> Result<(f64, f64)> {
    let per = loglik_importance_subjects(data, theta, moments, cfg, stream)?;
    let ll = per.iter().map(|e| e.log_p).fold(0.0, |a, b| a + b);
    let se = per
        .iter()
        .map(|e| e.se * e.se)
        .fold(0.0, |a, b| a + b)
        .sqrt();
    Ok((ll, se))
}

pub fn loglik_importance_subjects(
    data: &Dataset,
    theta: &Theta,
    moments: &ConditionalMoments,
    cfg: &ISConfig,
    stream: &RngStream,
) -> Result<Vec<SubjectEstimate>> {
    theta.validate()?;
    cfg.validate()?;
    if moments.mean.len() != data.n_subjects() {
        return Err(Error::shape(
            "conditional moments do not cover every subject",
        ));
    }
    let var = moments.variance();
    let results: Vec<Result<SubjectEstimate>> = data
        .subjects
        .par_iter()
        .enumerate()
        .map(|(i, subj)| {
            let mut s = stream.child(i as u64);
            let scale = [var[i][0].sqrt(), var[i][1].sqrt()];
            subject_importance(theta, subj, moments.mean[i], scale, cfg, &mut s)
        })
        .collect();
    results.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Quadrature oracle
// ---------------------------------------------------------------------------

/// Log of the aᵢ-factor of the subject integrand: zero/non-zero indicators
/// plus the N(a, σ₁²) prior.
fn log_factor_a(theta: &Theta, subject: &Subject, a: f64) -> f64 {
    let mut acc = -0.5 * (2.0 * std::f64::consts::PI * theta.sigma1_sq).ln()
        - 0.5 * (a - theta.a).powi(2) / theta.sigma1_sq;
    for o in &subject.observations {
        let p = clamp_prob(expit(a + dot(&o.x, &theta.alpha)));
        acc += if o.y > 0 { p.ln() } else { (1.0 - p).ln() };
    }
    acc
}

/// Log of the bᵢ-factor: positive-count beta-binomial terms plus N(b, σ₂²).
fn log_factor_b(theta: &Theta, subject: &Subject, b: f64) -> f64 {
    let mut acc = -0.5 * (2.0 * std::f64::consts::PI * theta.sigma2_sq).ln()
        - 0.5 * (b - theta.b).powi(2) / theta.sigma2_sq;
    for o in &subject.observations {
        if o.y > 0 {
            let u = clamp_prob(expit(b + dot(&o.z, &theta.beta)));
            acc += betabin_log_pmf(o.y, o.s, u, theta.phi).unwrap_or(f64::NEG_INFINITY);
        }
    }
    acc
}

/// Mode and curvature scale of a smooth unimodal log-integrand.
fn laplace_center(f: &impl Fn(f64) -> f64, start: f64, prior_sd: f64) -> (f64, f64) {
    let h = 1e-4 * prior_sd.max(1e-6);
    let deriv = |x: f64| {
        let (fp, f0, fm) = (f(x + h), f(x), f(x - h));
        ((fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h))
    };
    let mut x = start;
    for _ in 0..100 {
        let (d1, d2) = deriv(x);
        let step = if d2 < 0.0 {
            -d1 / d2
        } else {
            d1.signum() * prior_sd
        };
        let step = step.clamp(-5.0 * prior_sd, 5.0 * prior_sd);
        let mut t = 1.0;
        let f0 = f(x);
        while t > 1e-10 && f(x + t * step) < f0 {
            t *= 0.5;
        }
        let next = x + t * step;
        if (next - x).abs() <= 1e-10 * (1.0 + x.abs()) {
            x = next;
            break;
        }
        x = next;
    }
    let (_, d2) = deriv(x);
    let sd = if d2 < 0.0 {
        (-1.0 / d2).sqrt()
    } else {
        prior_sd
    };
    (x, sd)
}

/// Adaptive Gauss–Hermite: returns ln ∫ exp(f) and the nodes/log-weights used,
/// so that callers can also integrate moments.
fn adaptive_gh(
    f: &impl Fn(f64) -> f64,
    start: f64,
    prior_sd: f64,
    nodes: &[f64],
    weights: &[f64],
) -> (f64, Vec<(f64, f64)>) {
    let (m, s) = laplace_center(f, start, prior_sd);
    let c = std::f64::consts::SQRT_2 * s;
    let pts: Vec<(f64, f64)> = nodes
        .iter()
        .zip(weights)
        .map(|(z, w)| {
            let x = m + c * z;
            (x, w.ln() + z * z + c.ln() + f(x))
        })
        .collect();
    let lws: Vec<f64> = pts.iter().map(|p| p.1).collect();
    (log_sum_exp(&lws), pts)
}

fn check_nodes(nodes: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if nodes < 5 {
        return Err(Error::domain(format!(
            "quadrature needs at least 5 nodes, got {nodes}"
        )));
    }
    gauss_hermite(nodes)
}

/// ln p(Yᵢ; θ) for one subject by adaptive Gauss–Hermite quadrature.
pub fn subject_loglik_quadrature(theta: &Theta, subject: &Subject, nodes: usize) -> Result<f64> {
    let (z, w) = check_nodes(nodes)?;
    let fa = |a: f64| log_factor_a(theta, subject, a);
    let fb = |b: f64| log_factor_b(theta, subject, b);
    let (la, _) = adaptive_gh(&fa, theta.a, theta.sigma1_sq.sqrt(), &z, &w);
    let (lb, _) = adaptive_gh(&fb, theta.b, theta.sigma2_sq.sqrt(), &z, &w);
    Ok(la + lb)
}

pub fn loglik_quadrature(data: &Dataset, theta: &Theta, nodes: usize) -> Result<f64> {
    theta.validate()?;
    let per: Vec<Result<f64>> = data
        .subjects
        .par_iter()
        .map(|s| subject_loglik_quadrature(theta, s, nodes))
        .collect();
    let mut total = 0.0;
    for v in per {
        total += v?;
    }
    Ok(total)
}

/// Exact (quadrature) conditional means and variances of φᵢ given Yᵢ. Since
/// the integrand factorizes, aᵢ and bᵢ are conditionally independent.
pub fn conditional_moments_quadrature(
    data: &Dataset,
    theta: &Theta,
    nodes: usize,
) -> Result<ConditionalMoments> {
    theta.validate()?;
    let (z, w) = check_nodes(nodes)?;
    let mut out = ConditionalMoments::zeros(data.n_subjects());
    for (i, subj) in data.subjects.iter().enumerate() {
        let fa = |a: f64| log_factor_a(theta, subj, a);
        let fb = |b: f64| log_factor_b(theta, subj, b);
        let parts = [
            adaptive_gh(&fa, theta.a, theta.sigma1_sq.sqrt(), &z, &w),
            adaptive_gh(&fb, theta.b, theta.sigma2_sq.sqrt(), &z, &w),
        ];
        for (k, (lz, pts)) in parts.iter().enumerate() {
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for (x, lw) in pts {
                let p = (lw - lz).exp();
                m1 += p * x;
                m2 += p * x * x;
            }
            out.mean[i][k] = m1;
            out.second[i][k] = m2;
        }
    }
    Ok(out)
}
