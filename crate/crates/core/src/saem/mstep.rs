//! Numerical maximization steps for (β, φ) and α, and the smoothing of the
//! maximizers into the parameter sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{betabin_kernel, clamp_prob, dot, kernel_derivs, Dataset, RandomEffect, Theta};
use crate::numerics::special::expit;
use crate::numerics::SquareMatrix;

pub const MAX_NEWTON_ITER: usize = 200;
pub const PHI_FLOOR: f64 = 1e-6;
const LN_PHI_BOUNDS: (f64, f64) = (-13.8, 18.4);
const LOGISTIC_TOL: f64 = 1e-8;
const RIDGE: f64 = 1.0;

/// Outcome of a numerical maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstepOutcome {
    pub estimate: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton ascent with backtracking. `eval` returns (value, gradient, Hessian)
/// and `None` for points outside the domain. Falls back to a scaled gradient
/// step when the Hessian is not negative definite.
fn newton_ascent(
    x0: Vec<f64>,
    tol: impl Fn(f64) -> f64,
    project: impl Fn(&mut [f64]),
    eval: impl Fn(&[f64]) -> Option<(f64, Vec<f64>, SquareMatrix)>,
) -> Result<MstepOutcome> {
    let mut x = x0;
    let (mut f, mut g, mut h) =
        eval(&x).ok_or_else(|| Error::domain("objective is not finite at the starting point"))?;
    for it in 0..MAX_NEWTON_ITER {
        let gn = norm(&g);
        if gn <= tol(f) {
            return Ok(MstepOutcome {
                estimate: x,
                objective: f,
                grad_norm: gn,
                iterations: it,
                converged: true,
            });
        }
        let dir = match h.scaled(-1.0).solve_spd(&g) {
            Ok(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => {
                let scale = 1.0 / (1.0 + gn);
                g.iter().map(|v| v * scale).collect()
            }
        };
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let mut cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            project(&mut cand);
            if let Some((fc, gc, hc)) = eval(&cand) {
                // Near the optimum the objective change falls below its rounding error.
                let slack = 64.0 * f64::EPSILON * (1.0 + f.abs());
                if fc >= f - slack {
                    moved = cand != x;
                    x = cand;
                    f = fc;
                    g = gc;
                    h = hc;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            let gn = norm(&g);
            let converged = gn <= tol(f);
            return Ok(MstepOutcome {
                estimate: x,
                objective: f,
                grad_norm: gn,
                iterations: it + 1,
                converged,
            });
        }
    }
    let gn = norm(&g);
    Ok(MstepOutcome {
        estimate: x,
        objective: f,
        grad_norm: gn,
        iterations: MAX_NEWTON_ITER,
        converged: gn <= tol(f),
    })
}

fn check_chains(data: &Dataset, re_chains: &[Vec<RandomEffect>]) -> Result<()> {
    if re_chains.is_empty() {
        return Err(Error::shape("at least one chain is required"));
    }
    if re_chains.iter().any(|c| c.len() != data.n_subjects()) {
        return Err(Error::shape(
            "chain length does not match the number of subjects",
        ));
    }
    Ok(())
}

struct PositiveObs<'a> {
    y: u32,
    s: u32,
    z: &'a [f64],
    subject: usize,
}

/// Chain-averaged positive-count beta-binomial objective in (β, ln φ), with
/// gradient and Hessian.
pub fn betabin_objective(
    data: &Dataset,
    re_chains: &[Vec<RandomEffect>],
    beta: &[f64],
    ln_phi: f64,
) -> (f64, Vec<f64>, SquareMatrix) {
    let obs = positive_obs(data);
    betabin_eval(&obs, re_chains, beta, ln_phi)
}

fn positive_obs(data: &Dataset) -> Vec<PositiveObs<'_>> {
    let mut out = Vec::new();
    for (i, subj) in data.subjects.iter().enumerate() {
        for o in &subj.observations {
            if o.y > 0 {
                out.push(PositiveObs {
                    y: o.y,
                    s: o.s,
                    z: &o.z,
                    subject: i,
                });
            }
        }
    }
    out
}

fn betabin_eval(
    obs: &[PositiveObs<'_>],
    re_chains: &[Vec<RandomEffect>],
    beta: &[f64],
    ln_phi: f64,
) -> (f64, Vec<f64>, SquareMatrix) {
    let q = beta.len();
    let phi = ln_phi.exp();
    let w = 1.0 / re_chains.len() as f64;
    let mut f = 0.0;
    let mut g = vec![0.0; q + 1];
    let mut h = SquareMatrix::zeros(q + 1);
    let mut row = vec![0.0; q + 1];
    for chain in re_chains {
        for o in obs {
            let raw = expit(chain[o.subject].b + dot(o.z, beta));
            let u = clamp_prob(raw);
            f += w * betabin_kernel(o.y, o.s, u, phi);
            let kd = kernel_derivs(o.y, o.s, u, phi);
            let du_deta = u * (1.0 - u);
            let d2u = du_deta * (1.0 - 2.0 * u);
            for j in 0..q {
                g[j] += w * kd.d_u * du_deta * o.z[j];
                row[j] = o.z[j];
            }
            g[q] += w * kd.d_phi * phi;
            // Hessian in (β, ln φ)
            let bb = kd.d_uu * du_deta * du_deta + kd.d_u * d2u;
            let bp = kd.d_uphi * du_deta * phi;
            let pp = kd.d_phiphi * phi * phi + kd.d_phi * phi;
            for j in 0..q {
                for k in 0..q {
                    h[(j, k)] += w * bb * row[j] * row[k];
                }
                h[(j, q)] += w * bp * row[j];
                h[(q, j)] += w * bp * row[j];
            }
            h[(q, q)] += w * pp;
        }
    }
    (f, g, h)
}

/// Maximize the positive-count objective over (β, ln φ), warm-started.
/// Returns (β̃, φ̃) and the optimizer outcome (estimate holds β then ln φ).
pub fn mstep_betabin(
    data: &Dataset,
    re_chains: &[Vec<RandomEffect>],
    beta_init: &[f64],
    phi_init: f64,
) -> Result<(Vec<f64>, f64, MstepOutcome)> {
    check_chains(data, re_chains)?;
    if beta_init.len() != data.dim_z {
        return Err(Error::shape("beta has the wrong dimension"));
    }
    if !(phi_init > 0.0 && phi_init.is_finite()) {
        return Err(Error::domain(format!(
            "phi must be positive, got {phi_init}"
        )));
    }
    let obs = positive_obs(data);
    if obs.is_empty() {
        return Err(Error::NoInformation(
            "no positive counts to inform (beta, phi)".into(),
        ));
    }
    let q = beta_init.len();
    let mut x0 = beta_init.to_vec();
    x0.push(phi_init.ln().clamp(LN_PHI_BOUNDS.0, LN_PHI_BOUNDS.1));
    let out = newton_ascent(
        x0,
        |f| 1e-6 * (1.0 + f.abs()),
        |x| x[q] = x[q].clamp(LN_PHI_BOUNDS.0, LN_PHI_BOUNDS.1),
        |x| {
            let (f, g, h) = betabin_eval(&obs, re_chains, &x[..q], x[q]);
            (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some((f, g, h))
        },
    )?;
    let beta = out.estimate[..q].to_vec();
    let phi = out.estimate[q].exp();
    Ok((beta, phi, out))
}

/// Chain-averaged zero-component log-likelihood in α with offsets aᵢ, plus a
/// ridge term `ridge/2·|α|²`.
fn logistic_eval(
    data: &Dataset,
    re_chains: &[Vec<RandomEffect>],
    alpha: &[f64],
    ridge: f64,
) -> (f64, Vec<f64>, SquareMatrix) {
    let r = alpha.len();
    let w = 1.0 / re_chains.len() as f64;
    let mut f = 0.0;
    let mut g = vec![0.0; r];
    let mut h = SquareMatrix::zeros(r);
    for chain in re_chains {
        for (re, subj) in chain.iter().zip(&data.subjects) {
            for o in &subj.observations {
                let p = clamp_prob(expit(re.a + dot(&o.x, alpha)));
                let pos = o.y > 0;
                f += w * if pos { p.ln() } else { (1.0 - p).ln() };
                let resid = if pos { 1.0 - p } else { -p };
                let v = p * (1.0 - p);
                for j in 0..r {
                    g[j] += w * resid * o.x[j];
                }
                h.add_outer(&o.x, -w * v);
            }
        }
    }
    if ridge > 0.0 {
        for j in 0..r {
            f -= 0.5 * ridge * alpha[j] * alpha[j];
            g[j] -= ridge * alpha[j];
            h[(j, j)] -= ridge;
        }
    }
    (f, g, h)
}

/// Logistic regression for α with per-subject offsets. Returns α̃, the outcome,
/// and whether a ridge-stabilized fallback was needed (separation).
pub fn mstep_logistic(
    data: &Dataset,
    re_chains: &[Vec<RandomEffect>],
    alpha_init: &[f64],
) -> Result<(Vec<f64>, MstepOutcome, bool)> {
    check_chains(data, re_chains)?;
    if alpha_init.len() != data.dim_x {
        return Err(Error::shape("alpha has the wrong dimension"));
    }
    let run = |ridge: f64, start: Vec<f64>| {
        newton_ascent(
            start,
            |_| LOGISTIC_TOL,
            |_| {},
            |x| {
                let (f, g, h) = logistic_eval(data, re_chains, x, ridge);
                (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some((f, g, h))
            },
        )
    };
    let out = run(0.0, alpha_init.to_vec())?;
    let runaway = out.estimate.iter().any(|v| v.abs() > 30.0);
    if out.converged && !runaway {
        return Ok((out.estimate.clone(), out, false));
    }
    let ridged = run(RIDGE, vec![0.0; alpha_init.len()])?;
    Ok((ridged.estimate.clone(), ridged, true))
}

/// Convex-combination smoothing of φ, α, β; the remaining components are
/// copied from `prev`. The flag reports whether φ hit its floor.
pub fn smooth_params(
    prev: &Theta,
    phi_tilde: f64,
    alpha_tilde: &[f64],
    beta_tilde: &[f64],
    gamma: f64,
) -> (Theta, bool) {
    let mut out = prev.clone();
    let phi = prev.phi + gamma * (phi_tilde - prev.phi);
    let floored = !(phi >= PHI_FLOOR);
    out.phi = if floored { PHI_FLOOR } else { phi };
    for (a, t) in out.alpha.iter_mut().zip(alpha_tilde) {
        *a += gamma * (t - *a);
    }
    for (b, t) in out.beta.iter_mut().zip(beta_tilde) {
        *b += gamma * (t - *b);
    }
    (out, floored)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta() -> Theta {
        Theta {
            phi: 4.0,
            a: 0.0,
            b: 0.0,
            alpha: vec![1.0],
            beta: vec![2.0],
            sigma1_sq: 1.0,
            sigma2_sq: 1.0,
        }
    }

    #[test]
    fn smoothing_endpoints_and_midpoint() {
        let t = theta();
        let (one, _) = smooth_params(&t, 6.0, &[3.0], &[-1.0], 1.0);
        assert_eq!((one.phi, one.alpha[0], one.beta[0]), (6.0, 3.0, -1.0));
        let (zero, _) = smooth_params(&t, 6.0, &[3.0], &[-1.0], 0.0);
        assert_eq!(zero, t);
        let (half, _) = smooth_params(&t, 6.0, &[3.0], &[-1.0], 0.5);
        assert_eq!(half.phi, 5.0);
        let (fl, flagged) = smooth_params(&t, -10.0, &[1.0], &[2.0], 1.0);
        assert!(flagged && fl.phi == PHI_FLOOR);
    }

    #[test]
    fn betabin_needs_positive_counts() {
        use crate::model::{Observation, Subject};
        let subj = Subject {
            id: "0".into(),
            observations: vec![Observation::new(0, 5, vec![], vec![], 1).unwrap()],
        };
        let data = Dataset::new(vec![subj], 0, 0).unwrap();
        let re = vec![vec![RandomEffect::new(0.0, 0.0)]];
        assert!(matches!(
            mstep_betabin(&data, &re, &[], 2.0),
            Err(Error::NoInformation(_))
        ));
    }
}
