//! The zero-inflated beta-binomial mixed model: data containers, parameters,
//! link functions, the beta-binomial pmf and the complete-data log-likelihood
//! with its analytic score and Hessian.
//!
//! Zero counts are attributed entirely to the structural-zero component: an
//! observation with `y == 0` contributes `ln(1 − p)` and the beta-binomial
//! branch is only evaluated for `y > 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::special::{expit, ln_beta, ln_gamma, psi, psi1};
use crate::numerics::SquareMatrix;

/// Linear-predictor probabilities are kept this far away from {0, 1}.
pub const PROB_CLAMP: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: u32,
    pub s: u32,
    /// Zero-inflation covariates.
    pub x: Vec<f64>,
    /// Mean covariates.
    pub z: Vec<f64>,
    pub occasion: i64,
}

impl Observation {
    pub fn new(y: u32, s: u32, x: Vec<f64>, z: Vec<f64>, occasion: i64) -> Result<Self> {
        if s == 0 {
            return Err(Error::domain("number of trials must be at least 1"));
        }
        if y > s {
            return Err(Error::domain(format!("count {y} exceeds trials {s}")));
        }
        Ok(Self {
            y,
            s,
            x,
            z,
            occasion,
        })
    }

    #[inline]
    pub fn is_positive(&self) -> bool {
        self.y > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
    pub dim_x: usize,
    pub dim_z: usize,
}

impl Dataset {
    pub fn new(subjects: Vec<Subject>, dim_x: usize, dim_z: usize) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::shape("dataset needs at least one subject"));
        }
        for subj in &subjects {
            if subj.observations.is_empty() {
                return Err(Error::shape(format!(
                    "subject {} has no observations",
                    subj.id
                )));
            }
            for o in &subj.observations {
                if o.x.len() != dim_x || o.z.len() != dim_z {
                    return Err(Error::shape(format!(
                        "subject {}: covariate lengths ({}, {}) differ from declared ({dim_x}, {dim_z})",
                        subj.id,
                        o.x.len(),
                        o.z.len()
                    )));
                }
                if o.s == 0 || o.y > o.s {
                    return Err(Error::domain(format!(
                        "subject {}: invalid count {}/{}",
                        subj.id, o.y, o.s
                    )));
                }
            }
        }
        Ok(Self {
            subjects,
            dim_x,
            dim_z,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(|s| s.observations.len()).sum()
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.subjects.iter().flat_map(|s| s.observations.iter())
    }

    /// Copy of the dataset with the listed covariate columns removed.
    pub fn drop_columns(&self, x_cols: &[usize], z_cols: &[usize]) -> Dataset {
        let keep = |v: &[f64], drop: &[usize]| -> Vec<f64> {
            v.iter()
                .enumerate()
                .filter(|(j, _)| !drop.contains(j))
                .map(|(_, x)| *x)
                .collect()
        };
        let subjects = self
            .subjects
            .iter()
            .map(|s| Subject {
                id: s.id.clone(),
                observations: s
                    .observations
                    .iter()
                    .map(|o| Observation {
                        x: keep(&o.x, x_cols),
                        z: keep(&o.z, z_cols),
                        ..o.clone()
                    })
                    .collect(),
            })
            .collect();
        Dataset {
            subjects,
            dim_x: self.dim_x - x_cols.iter().filter(|&&j| j < self.dim_x).count(),
            dim_z: self.dim_z - z_cols.iter().filter(|&&j| j < self.dim_z).count(),
        }
    }
}

/// Model parameters. Variances are stored on the variance scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub phi: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
}

impl Theta {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.phi, self.a, self.b, self.sigma1_sq, self.sigma2_sq]
            .iter()
            .chain(&self.alpha)
            .chain(&self.beta)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain("theta has non-finite entries"));
        }
        if !(self.phi > 0.0) {
            return Err(Error::domain(format!(
                "phi must be positive, got {}",
                self.phi
            )));
        }
        if !(self.sigma1_sq > 0.0 && self.sigma2_sq > 0.0) {
            return Err(Error::domain(format!(
                "random-effect variances must be positive, got ({}, {})",
                self.sigma1_sq, self.sigma2_sq
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn mu(&self) -> [f64; 2] {
        [self.a, self.b]
    }

    pub fn g(&self) -> crate::numerics::Mat2 {
        crate::numerics::Mat2::diag(self.sigma1_sq, self.sigma2_sq)
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            dim_x: self.alpha.len(),
            dim_z: self.beta.len(),
        }
    }

    /// Flatten as (φ, a, b, α, β, σ₁², σ₂²).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().len());
        v.extend([self.phi, self.a, self.b]);
        v.extend(&self.alpha);
        v.extend(&self.beta);
        v.extend([self.sigma1_sq, self.sigma2_sq]);
        v
    }

    pub fn from_vec(layout: ParamLayout, v: &[f64]) -> Result<Self> {
        if v.len() != layout.len() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                layout.len(),
                v.len()
            )));
        }
        Ok(Theta {
            phi: v[ParamLayout::PHI],
            a: v[ParamLayout::A],
            b: v[ParamLayout::B],
            alpha: v[layout.alpha_range()].to_vec(),
            beta: v[layout.beta_range()].to_vec(),
            sigma1_sq: v[layout.sigma1_sq()],
            sigma2_sq: v[layout.sigma2_sq()],
        })
    }

    fn check_dims(&self, obs: &Observation) -> Result<()> {
        if obs.x.len() != self.alpha.len() || obs.z.len() != self.beta.len() {
            return Err(Error::shape(format!(
                "observation covariates ({}, {}) vs coefficients ({}, {})",
                obs.x.len(),
                obs.z.len(),
                self.alpha.len(),
                self.beta.len()
            )));
        }
        Ok(())
    }
}

/// Positions of each parameter in the flattened vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub dim_x: usize,
    pub dim_z: usize,
}

impl ParamLayout {
    pub const PHI: usize = 0;
    pub const A: usize = 1;
    pub const B: usize = 2;

    pub fn len(&self) -> usize {
        5 + self.dim_x + self.dim_z
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn alpha_range(&self) -> std::ops::Range<usize> {
        3..3 + self.dim_x
    }

    pub fn beta_range(&self) -> std::ops::Range<usize> {
        3 + self.dim_x..3 + self.dim_x + self.dim_z
    }

    pub fn sigma1_sq(&self) -> usize {
        3 + self.dim_x + self.dim_z
    }

    pub fn sigma2_sq(&self) -> usize {
        4 + self.dim_x + self.dim_z
    }

    pub fn names(&self) -> Vec<String> {
        let mut n = vec!["phi".to_string(), "a".to_string(), "b".to_string()];
        n.extend((1..=self.dim_x).map(|j| format!("alpha_{j}")));
        n.extend((1..=self.dim_z).map(|j| format!("beta_{j}")));
        n.push("sigma1_sq".into());
        n.push("sigma2_sq".into());
        n
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| n == name)
    }
}

/// Per-subject random intercepts φᵢ = (aᵢ, bᵢ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomEffect {
    pub a: f64,
    pub b: f64,
}

impl RandomEffect {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.a, self.b]
    }
}

impl From<[f64; 2]> for RandomEffect {
    fn from(v: [f64; 2]) -> Self {
        Self { a: v[0], b: v[1] }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Zero-inflation probability p from the zero-component linear predictor.
#[inline]
pub(crate) fn p_of(a_i: f64, x: &[f64], alpha: &[f64]) -> f64 {
    clamp_prob(expit(a_i + dot(x, alpha)))
}

/// Mean success probability u from the mean-component linear predictor.
#[inline]
pub(crate) fn u_of(b_i: f64, z: &[f64], beta: &[f64]) -> f64 {
    clamp_prob(expit(b_i + dot(z, beta)))
}

/// (p, u) for one observation.
pub fn linear_predictors(
    theta: &Theta,
    re: &RandomEffect,
    obs: &Observation,
) -> Result<(f64, f64)> {
    theta.check_dims(obs)?;
    Ok((
        p_of(re.a, &obs.x, &theta.alpha),
        u_of(re.b, &obs.z, &theta.beta),
    ))
}

fn ln_choose(s: u32, y: u32) -> f64 {
    ln_gamma(s as f64 + 1.0) - ln_gamma(y as f64 + 1.0) - ln_gamma((s - y) as f64 + 1.0)
}

/// ln B(y + uφ, s − y + (1 − u)φ) − ln B(uφ, (1 − u)φ): the θ-dependent part
/// of the beta-binomial log-pmf.
#[inline]
pub fn betabin_kernel(y: u32, s: u32, u: f64, phi: f64) -> f64 {
    let (yf, sf) = (y as f64, s as f64);
    let (ap, bp) = (u * phi, (1.0 - u) * phi);
    ln_beta(yf + ap, sf - yf + bp) - ln_beta(ap, bp)
}

/// Log beta-binomial pmf, including the binomial coefficient.
pub fn betabin_log_pmf(y: u32, s: u32, u: f64, phi: f64) -> Result<f64> {
    if y > s {
        return Err(Error::domain(format!("count {y} exceeds trials {s}")));
    }
    if !(u > 0.0 && u < 1.0) || !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::domain(format!(
            "need 0 < u < 1 and phi > 0, got u={u}, phi={phi}"
        )));
    }
    Ok(ln_choose(s, y) + betabin_kernel(y, s, u, phi))
}

/// Mean and variance of BetaBin(s, uφ, (1 − u)φ).
pub fn betabin_mean_var(s: u32, u: f64, phi: f64) -> (f64, f64) {
    let sf = s as f64;
    let mean = sf * u;
    let var = sf * u * (1.0 - u) * (1.0 + (sf - 1.0) / (phi + 1.0));
    (mean, var)
}

/// Log density of one observation under the mixture.
pub fn mixture_log_density(theta: &Theta, re: &RandomEffect, obs: &Observation) -> Result<f64> {
    let (p, u) = linear_predictors(theta, re, obs)?;
    if obs.y == 0 {
        Ok((1.0 - p).ln())
    } else {
        Ok(p.ln() + betabin_log_pmf(obs.y, obs.s, u, theta.phi)?)
    }
}

/// ln p(Yᵢ | φᵢ; θ), including binomial coefficients.
pub fn subject_log_lik(theta: &Theta, re: &RandomEffect, subject: &Subject) -> Result<f64> {
    let mut total = 0.0;
    for o in &subject.observations {
        total += mixture_log_density(theta, re, o)?;
    }
    Ok(total)
}

/// ln N(φᵢ; μ, diag(σ₁², σ₂²)).
pub fn log_prior_density(theta: &Theta, re: &RandomEffect) -> f64 {
    let da = re.a - theta.a;
    let db = re.b - theta.b;
    -0.5 * (2.0 * LN_2PI + theta.sigma1_sq.ln() + theta.sigma2_sq.ln())
        - 0.5 * (da * da / theta.sigma1_sq + db * db / theta.sigma2_sq)
}

fn check_re_count(re_all: &[RandomEffect], data: &Dataset) -> Result<()> {
    if re_all.len() != data.n_subjects() {
        return Err(Error::shape(format!(
            "{} random effects for {} subjects",
            re_all.len(),
            data.n_subjects()
        )));
    }
    Ok(())
}

/// ln p(Y, φ; θ).
pub fn complete_data_loglik(theta: &Theta, re_all: &[RandomEffect], data: &Dataset) -> Result<f64> {
    theta.validate()?;
    check_re_count(re_all, data)?;
    let mut total = 0.0;
    for (re, subj) in re_all.iter().zip(&data.subjects) {
        total += log_prior_density(theta, re);
        total += subject_log_lik(theta, re, subj)?;
    }
    Ok(total)
}

/// Derivatives of the beta-binomial kernel with respect to (u, φ).
#[derive(Debug, Clone, Copy)]
pub(crate) struct KernelDerivs {
    pub d_u: f64,
    pub d_phi: f64,
    pub d_uu: f64,
    pub d_uphi: f64,
    pub d_phiphi: f64,
}

#[inline]
pub(crate) fn kernel_gradient(y: u32, s: u32, u: f64, phi: f64) -> (f64, f64) {
    let (yf, sf) = (y as f64, s as f64);
    let (ap, bp) = (u * phi, (1.0 - u) * phi);
    let (p1, p2, p3, p4) = (psi(yf + ap), psi(sf - yf + bp), psi(ap), psi(bp));
    let d_u = phi * (p1 - p2 - p3 + p4);
    let d_phi = u * (p1 - p3) + (1.0 - u) * (p2 - p4) - psi(sf + phi) + psi(phi);
    (d_u, d_phi)
}

#[inline]
pub(crate) fn kernel_derivs(y: u32, s: u32, u: f64, phi: f64) -> KernelDerivs {
    let (yf, sf) = (y as f64, s as f64);
    let (ap, bp) = (u * phi, (1.0 - u) * phi);
    let (p1, p2, p3, p4) = (psi(yf + ap), psi(sf - yf + bp), psi(ap), psi(bp));
    let (t1, t2, t3, t4) = (psi1(yf + ap), psi1(sf - yf + bp), psi1(ap), psi1(bp));
    let v = 1.0 - u;
    KernelDerivs {
        d_u: phi * (p1 - p2 - p3 + p4),
        d_phi: u * (p1 - p3) + v * (p2 - p4) - psi(sf + phi) + psi(phi),
        d_uu: phi * phi * (t1 + t2 - t3 - t4),
        d_uphi: (p1 - p2 - p3 + p4) + phi * (u * (t1 - t3) - v * (t2 - t4)),
        d_phiphi: u * u * (t1 - t3) + v * v * (t2 - t4) - psi1(sf + phi) + psi1(phi),
    }
}

/// ∂ ln p(Y, φ; θ) / ∂θ in flattened (φ, a, b, α, β, σ₁², σ₂²) order.
pub fn complete_data_score(
    theta: &Theta,
    re_all: &[RandomEffect],
    data: &Dataset,
) -> Result<Vec<f64>> {
    Ok(score_and_hessian(theta, re_all, data, false)?.0)
}

/// Analytic Hessian of ln p(Y, φ; θ).
pub fn complete_data_hessian(
    theta: &Theta,
    re_all: &[RandomEffect],
    data: &Dataset,
) -> Result<SquareMatrix> {
    Ok(score_and_hessian(theta, re_all, data, true)?
        .1
        .expect("hessian requested"))
}

/// Score and (optionally) Hessian of the complete-data log-likelihood.
pub fn score_and_hessian(
    theta: &Theta,
    re_all: &[RandomEffect],
    data: &Dataset,
    with_hessian: bool,
) -> Result<(Vec<f64>, Option<SquareMatrix>)> {
    theta.validate()?;
    check_re_count(re_all, data)?;
    if data.dim_x != theta.alpha.len() || data.dim_z != theta.beta.len() {
        return Err(Error::shape(
            "dataset covariate dimensions do not match theta",
        ));
    }
    let layout = theta.layout();
    let n = layout.len();
    let mut g = vec![0.0; n];
    let mut h = with_hessian.then(|| SquareMatrix::zeros(n));
    let ar = layout.alpha_range();
    let br = layout.beta_range();
    let (i_s1, i_s2) = (layout.sigma1_sq(), layout.sigma2_sq());
    let (s1, s2) = (theta.sigma1_sq, theta.sigma2_sq);
    let phi = theta.phi;

    for (re, subj) in re_all.iter().zip(&data.subjects) {
        let da = re.a - theta.a;
        let db = re.b - theta.b;
        g[ParamLayout::A] += da / s1;
        g[ParamLayout::B] += db / s2;
        g[i_s1] += -0.5 / s1 + 0.5 * da * da / (s1 * s1);
        g[i_s2] += -0.5 / s2 + 0.5 * db * db / (s2 * s2);
        if let Some(h) = h.as_mut() {
            h[(ParamLayout::A, ParamLayout::A)] -= 1.0 / s1;
            h[(ParamLayout::B, ParamLayout::B)] -= 1.0 / s2;
            add_sym(h, ParamLayout::A, i_s1, -da / (s1 * s1));
            add_sym(h, ParamLayout::B, i_s2, -db / (s2 * s2));
            h[(i_s1, i_s1)] += 0.5 / (s1 * s1) - da * da / (s1 * s1 * s1);
            h[(i_s2, i_s2)] += 0.5 / (s2 * s2) - db * db / (s2 * s2 * s2);
        }

        for o in &subj.observations {
            // Zero-inflation component: logistic score with offset aᵢ.
            let p = p_of(re.a, &o.x, &theta.alpha);
            let resid = if o.y > 0 { 1.0 - p } else { -p };
            for (j, xj) in o.x.iter().enumerate() {
                g[ar.start + j] += resid * xj;
            }
            if let Some(h) = h.as_mut() {
                let w = p * (1.0 - p);
                for (j, xj) in o.x.iter().enumerate() {
                    for (k, xk) in o.x.iter().enumerate() {
                        h[(ar.start + j, ar.start + k)] -= w * xj * xk;
                    }
                }
            }

            if o.y == 0 {
                continue;
            }
            // Beta-binomial component through u = expit(bᵢ + zᵀβ).
            let u = u_of(re.b, &o.z, &theta.beta);
            let du_deta = u * (1.0 - u);
            if let Some(h) = h.as_mut() {
                let kd = kernel_derivs(o.y, o.s, u, phi);
                g[ParamLayout::PHI] += kd.d_phi;
                let gb = kd.d_u * du_deta;
                for (j, zj) in o.z.iter().enumerate() {
                    g[br.start + j] += gb * zj;
                }
                h[(ParamLayout::PHI, ParamLayout::PHI)] += kd.d_phiphi;
                let hbb = kd.d_uu * du_deta * du_deta + kd.d_u * du_deta * (1.0 - 2.0 * u);
                let hbp = kd.d_uphi * du_deta;
                for (j, zj) in o.z.iter().enumerate() {
                    add_sym(h, ParamLayout::PHI, br.start + j, hbp * zj);
                    for (k, zk) in o.z.iter().enumerate() {
                        h[(br.start + j, br.start + k)] += hbb * zj * zk;
                    }
                }
            } else {
                let (d_u, d_phi) = kernel_gradient(o.y, o.s, u, phi);
                g[ParamLayout::PHI] += d_phi;
                let gb = d_u * du_deta;
                for (j, zj) in o.z.iter().enumerate() {
                    g[br.start + j] += gb * zj;
                }
            }
        }
    }

    Ok((g, h))
}

#[inline]
fn add_sym(h: &mut SquareMatrix, i: usize, j: usize, v: f64) {
    h[(i, j)] += v;
    if i != j {
        h[(j, i)] += v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(y: u32, s: u32, x: Vec<f64>, z: Vec<f64>) -> Observation {
        Observation::new(y, s, x, z, 1).unwrap()
    }

    fn theta0(dx: usize, dz: usize) -> Theta {
        Theta {
            phi: 2.0,
            a: 0.0,
            b: 0.0,
            alpha: vec![0.0; dx],
            beta: vec![0.0; dz],
            sigma1_sq: 1.0,
            sigma2_sq: 1.0,
        }
    }

    #[test]
    fn linear_predictor_examples() {
        let t = theta0(1, 1);
        let o = obs(1, 2, vec![1.0], vec![1.0]);
        assert_eq!(
            linear_predictors(&t, &RandomEffect::new(0.0, 0.0), &o).unwrap(),
            (0.5, 0.5)
        );

        let t = Theta {
            alpha: vec![0.5],
            beta: vec![0.5],
            ..theta0(1, 1)
        };
        let (p, u) = linear_predictors(&t, &RandomEffect::new(-0.5, -0.5), &o).unwrap();
        assert_eq!((p, u), (0.5, 0.5));

        let t = theta0(0, 0);
        let o = obs(1, 2, vec![], vec![]);
        let (p, u) = linear_predictors(&t, &RandomEffect::new(1.0, -1.0), &o).unwrap();
        assert!((p - 0.7310585786300049).abs() < 1e-15);
        assert!((u - 0.2689414213699951).abs() < 1e-15);

        let bad = obs(1, 2, vec![1.0, 2.0], vec![]);
        assert!(matches!(
            linear_predictors(&t, &RandomEffect::new(0.0, 0.0), &bad),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn pmf_bernoulli_cases() {
        assert!((betabin_log_pmf(1, 1, 0.3, 2.0).unwrap() - 0.3f64.ln()).abs() < 1e-14);
        assert!((betabin_log_pmf(0, 1, 0.5, 2.0).unwrap() - 0.5f64.ln()).abs() < 1e-14);
        assert!(betabin_log_pmf(4, 3, 0.5, 2.0).is_err());
    }

    #[test]
    fn mean_var_examples() {
        assert_eq!(betabin_mean_var(2, 0.5, 1.0), (1.0, 0.75));
        let (m, v) = betabin_mean_var(1, 0.3, 7.0);
        assert!((m - 0.3).abs() < 1e-15 && (v - 0.21).abs() < 1e-15);
        // Binomial limit.
        let (_, v) = betabin_mean_var(500, 0.4, 1e8);
        assert!((v / (500.0 * 0.4 * 0.6) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn mixture_examples() {
        let t = Theta {
            phi: 2.0,
            ..theta0(0, 0)
        };
        let re = RandomEffect::new(0.0, 0.0);
        let zero = obs(0, 10, vec![], vec![]);
        assert!((mixture_log_density(&t, &re, &zero).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        // Independent of u and φ for zeros.
        let t2 = Theta {
            phi: 50.0,
            b: 3.0,
            ..t.clone()
        };
        assert_eq!(
            mixture_log_density(&t2, &re, &zero).unwrap(),
            mixture_log_density(&t, &re, &zero).unwrap()
        );
        let one = obs(1, 1, vec![], vec![]);
        assert!((mixture_log_density(&t, &re, &one).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn complete_loglik_gaussian_at_mean() {
        let t = Theta {
            sigma1_sq: 0.49,
            sigma2_sq: 0.25,
            ..theta0(0, 0)
        };
        let subj = Subject {
            id: "1".into(),
            observations: vec![obs(0, 5, vec![], vec![])],
        };
        let data = Dataset::new(vec![subj.clone()], 0, 0).unwrap();
        let re = [RandomEffect::new(t.a, t.b)];
        let want = -0.5 * (2.0 * std::f64::consts::PI * 0.49).ln()
            - 0.5 * (2.0 * std::f64::consts::PI * 0.25).ln()
            + 0.5f64.ln();
        let got = complete_data_loglik(&t, &re, &data).unwrap();
        assert!((got - want).abs() < 1e-13);

        let data2 = Dataset::new(vec![subj.clone(), subj], 0, 0).unwrap();
        let re2 = [re[0], re[0]];
        assert!((complete_data_loglik(&t, &re2, &data2).unwrap() - 2.0 * got).abs() < 1e-12);

        assert!(complete_data_loglik(
            &Theta {
                sigma1_sq: 0.0,
                ..t.clone()
            },
            &re,
            &data
        )
        .is_err());
    }

    #[test]
    fn score_at_mean_and_logistic_half() {
        let t = theta0(1, 1);
        let subjects: Vec<Subject> = (0..3)
            .map(|i| Subject {
                id: i.to_string(),
                observations: vec![
                    obs(2, 5, vec![1.0 + i as f64], vec![0.3]),
                    obs(1, 4, vec![-0.5], vec![1.0]),
                ],
            })
            .collect();
        let data = Dataset::new(subjects, 1, 1).unwrap();
        let re = vec![RandomEffect::new(0.0, 0.0); 3];
        let g = complete_data_score(&t, &re, &data).unwrap();
        assert_eq!(g[ParamLayout::A], 0.0);
        assert_eq!(g[ParamLayout::B], 0.0);
        // All y > 0 and p = ½ ⇒ ∂/∂α = ½ Σ x.
        let sum_x: f64 = data.observations().map(|o| o.x[0]).sum();
        assert!((g[3] - 0.5 * sum_x).abs() < 1e-14);
    }

    #[test]
    fn drop_columns_reduces_dims() {
        let subj = Subject {
            id: "s".into(),
            observations: vec![obs(1, 3, vec![1.0, 2.0], vec![3.0, 4.0])],
        };
        let data = Dataset::new(vec![subj], 2, 2).unwrap();
        let r = data.drop_columns(&[0], &[0]);
        assert_eq!((r.dim_x, r.dim_z), (1, 1));
        assert_eq!(r.subjects[0].observations[0].x, vec![2.0]);
        assert_eq!(r.subjects[0].observations[0].z, vec![4.0]);
    }

    #[test]
    fn theta_vec_roundtrip_and_names() {
        let t = Theta {
            phi: 6.4,
            a: -0.5,
            b: -0.5,
            alpha: vec![0.5, 0.1],
            beta: vec![0.2],
            sigma1_sq: 0.49,
            sigma2_sq: 0.25,
        };
        let v = t.to_vec();
        assert_eq!(Theta::from_vec(t.layout(), &v).unwrap(), t);
        assert_eq!(
            t.layout().names(),
            vec![
                "phi",
                "a",
                "b",
                "alpha_1",
                "alpha_2",
                "beta_1",
                "sigma1_sq",
                "sigma2_sq"
            ]
        );
    }
}
