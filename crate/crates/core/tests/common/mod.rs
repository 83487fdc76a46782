//! Shared helpers for the integration tests: random configurations and
//! independent reference computations written directly from the model
//! definition (no reuse of the crate's density code).

#![allow(dead_code)]

use zibbmr::model::{Dataset, Observation, RandomEffect, Subject, Theta};
use zibbmr::numerics::special::{expit, log_gamma, log_sum_exp};
use zibbmr::numerics::{Purpose, RngStream};
use zibbmr::sampler::gibbs_update_w;

pub fn stream(tag: u64) -> RngStream {
    RngStream::for_purpose(20_261_014, Purpose::Test, tag, 0)
}

pub fn uniform(s: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * s.uniform()
}

pub fn random_theta(s: &mut RngStream, dx: usize, dz: usize) -> Theta {
    Theta {
        phi: uniform(s, 0.5, 40.0),
        a: uniform(s, -1.5, 1.5),
        b: uniform(s, -1.5, 1.5),
        alpha: (0..dx).map(|_| uniform(s, -1.0, 1.0)).collect(),
        beta: (0..dz).map(|_| uniform(s, -1.0, 1.0)).collect(),
        sigma1_sq: uniform(s, 0.1, 2.0),
        sigma2_sq: uniform(s, 0.1, 2.0),
    }
}

pub fn random_subject(
    s: &mut RngStream,
    id: usize,
    dx: usize,
    dz: usize,
    t_max: usize,
    s_max: u32,
) -> Subject {
    let t = 1 + (s.uniform() * t_max as f64) as usize;
    let observations = (0..t)
        .map(|k| {
            let trials = 1 + (s.uniform() * s_max as f64) as u32;
            let y = if s.uniform() < 0.3 {
                0
            } else {
                (s.uniform() * (trials + 1) as f64) as u32
            }
            .min(trials);
            let x = (0..dx).map(|_| uniform(s, -1.0, 1.0)).collect();
            let z = (0..dz).map(|_| uniform(s, -1.0, 1.0)).collect();
            Observation::new(y, trials, x, z, k as i64 + 1).unwrap()
        })
        .collect();
    Subject {
        id: format!("r{id}"),
        observations,
    }
}

pub fn random_dataset(
    s: &mut RngStream,
    n: usize,
    dx: usize,
    dz: usize,
    t_max: usize,
    s_max: u32,
) -> Dataset {
    Dataset::new(
        (0..n)
            .map(|i| random_subject(s, i, dx, dz, t_max, s_max))
            .collect(),
        dx,
        dz,
    )
    .unwrap()
}

pub fn random_re(s: &mut RngStream) -> RandomEffect {
    RandomEffect::new(uniform(s, -2.5, 2.5), uniform(s, -2.5, 2.5))
}

fn lg(x: f64) -> f64 {
    log_gamma(x).unwrap()
}

/// ln s! by direct summation.
pub fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

pub fn ln_choose(s: u32, y: u32) -> f64 {
    ln_factorial(s) - ln_factorial(y) - ln_factorial(s - y)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn p_u(theta: &Theta, re: &RandomEffect, o: &Observation) -> (f64, f64) {
    let clamp = |v: f64| v.clamp(1e-12, 1.0 - 1e-12);
    (
        clamp(expit(re.a + dot(&o.x, &theta.alpha))),
        clamp(expit(re.b + dot(&o.z, &theta.beta))),
    )
}

/// ln N₂(φ; μ, G) written out for a diagonal covariance.
pub fn oracle_log_prior(theta: &Theta, re: &RandomEffect) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    -0.5 * (two_pi * theta.sigma1_sq).ln()
        - 0.5 * (re.a - theta.a).powi(2) / theta.sigma1_sq
        - 0.5 * (two_pi * theta.sigma2_sq).ln()
        - 0.5 * (re.b - theta.b).powi(2) / theta.sigma2_sq
}

/// ln p(Yᵢ, φᵢ; θ) from the mixture with Beta-function ratios expanded into
/// Gamma functions.
pub fn oracle_log_joint(theta: &Theta, subj: &Subject, re: &RandomEffect) -> f64 {
    let phi = theta.phi;
    let mut acc = oracle_log_prior(theta, re);
    for o in &subj.observations {
        let (p, u) = p_u(theta, re, o);
        if o.y == 0 {
            acc += (1.0 - p).ln();
        } else {
            let (y, s) = (o.y as f64, o.s as f64);
            acc += p.ln() + ln_choose(o.s, o.y) + lg(y + u * phi) + lg(s - y + (1.0 - u) * phi)
                - lg(s + phi)
                - lg(u * phi)
                - lg((1.0 - u) * phi)
                + lg(phi);
        }
    }
    acc
}

/// ln p(Yᵢ, wᵢ, φᵢ; θ): zero indicators, binomial in w, Beta prior on w.
pub fn oracle_log_joint_augmented(
    theta: &Theta,
    subj: &Subject,
    re: &RandomEffect,
    w: &[Option<f64>],
) -> f64 {
    let phi = theta.phi;
    let mut acc = oracle_log_prior(theta, re);
    for (o, wt) in subj.observations.iter().zip(w) {
        let (p, u) = p_u(theta, re, o);
        match wt {
            None => acc += (1.0 - p).ln(),
            Some(w) => {
                let (y, s) = (o.y as f64, o.s as f64);
                let (ap, bp) = (u * phi, (1.0 - u) * phi);
                acc += p.ln()
                    + ln_choose(o.s, o.y)
                    + y * w.ln()
                    + (s - y) * (1.0 - w).ln()
                    + (ap - 1.0) * w.ln()
                    + (bp - 1.0) * (1.0 - w).ln()
                    - (lg(ap) + lg(bp) - lg(phi));
            }
        }
    }
    acc
}

/// ln ∫₀¹ w^(p−1) (1−w)^(q−1) dw by the double-exponential substitution
/// w = expit(π sinh t), trapezoid rule in t, all in log space.
pub fn tanh_sinh_log_beta_integral(p: f64, q: f64) -> f64 {
    let h = 1.0 / 256.0;
    let t_max = 12.0;
    let n = (t_max / h) as i64;
    let pi = std::f64::consts::PI;
    let mut terms = Vec::with_capacity(2 * n as usize + 1);
    for k in -n..=n {
        let t = k as f64 * h;
        let x = pi * t.sinh();
        // ln w and ln(1 − w) for w = 1/(1 + e^(−x))
        let ln_w = -softplus(-x);
        let ln_1mw = -softplus(x);
        // integrand × dw/dt, with dw/dt = w(1 − w) π cosh t
        terms.push(p * ln_w + q * ln_1mw + (pi * t.cosh()).ln() + h.ln());
    }
    log_sum_exp(&terms)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Beta-binomial log-pmf from the hierarchical definition: binomial
/// likelihood integrated against a Beta(uφ, (1−u)φ) density, both integrals
/// done numerically.
pub fn oracle_betabin_log_pmf(y: u32, s: u32, u: f64, phi: f64) -> f64 {
    let (a, b) = (u * phi, (1.0 - u) * phi);
    ln_choose(s, y) + tanh_sinh_log_beta_integral(y as f64 + a, (s - y) as f64 + b)
        - tanh_sinh_log_beta_integral(a, b)
}

/// Kolmogorov–Smirnov distance between a sample and a CDF.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d
            .max((f - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Tabulated CDF of a density known up to a constant on the logit scale.
pub struct GridCdf {
    t: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridCdf {
    /// `log_density_t` is the log-density of t = logit(w) (Jacobian included).
    pub fn from_logit_density(
        log_density_t: impl Fn(f64) -> f64,
        lo: f64,
        hi: f64,
        n: usize,
    ) -> Self {
        let h = (hi - lo) / n as f64;
        let t: Vec<f64> = (0..=n).map(|k| lo + k as f64 * h).collect();
        let ld: Vec<f64> = t.iter().map(|&x| log_density_t(x)).collect();
        let m = ld.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = ld.iter().map(|v| (v - m).exp()).collect();
        let mut cdf = vec![0.0; n + 1];
        for k in 1..=n {
            cdf[k] = cdf[k - 1] + 0.5 * h * (dens[k] + dens[k - 1]);
        }
        let total = cdf[n];
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { t, cdf }
    }

    pub fn at(&self, t: f64) -> f64 {
        if t <= self.t[0] {
            return 0.0;
        }
        let n = self.t.len() - 1;
        if t >= self.t[n] {
            return 1.0;
        }
        let h = self.t[1] - self.t[0];
        let k = ((t - self.t[0]) / h) as usize;
        let k = k.min(n - 1);
        let f = (t - self.t[k]) / h;
        self.cdf[k] * (1.0 - f) + self.cdf[k + 1] * f
    }
}

pub fn logit(w: f64) -> f64 {
    (w / (1.0 - w)).ln()
}

/// KS distance of Gibbs draws of w against a grid-integrated posterior
/// w^y (1−w)^(s−y) Beta(w; uφ, (1−u)φ), tabulated on the logit scale.
pub fn gibbs_ks(y: u32, trials: u32, u: f64, phi: f64, draws: usize, tag: u64) -> f64 {
    let b = u.ln() - (1.0 - u).ln();
    let theta = Theta {
        phi,
        a: 0.0,
        b,
        alpha: vec![],
        beta: vec![],
        sigma1_sq: 1.0,
        sigma2_sq: 1.0,
    };
    let obs = Observation::new(y, trials, vec![], vec![], 0).unwrap();
    let re = RandomEffect::new(0.0, b);
    let (p, q) = (y as f64 + u * phi, (trials - y) as f64 + (1.0 - u) * phi);
    let grid = GridCdf::from_logit_density(
        |t: f64| {
            let ln_w = -(1.0 + (-t).exp()).ln();
            let ln_1mw = -(1.0 + t.exp()).ln();
            p * ln_w + q * ln_1mw
        },
        -200.0,
        200.0,
        400_000,
    );
    let mut s = stream(tag);
    let mut t: Vec<f64> = (0..draws)
        .map(|_| logit(gibbs_update_w(&mut s, &theta, &re, &obs).unwrap()))
        .collect();
    ks_distance(&mut t, |x| grid.at(x))
}
