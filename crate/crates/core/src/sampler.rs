//! Simulation step: Metropolis–Hastings updates of the random intercepts with
//! three cycled proposal kernels, and the Gibbs refresh of the latent Beta
//! probabilities in the augmented formulation.
//!
//! Kernel 1 proposes from the current prior N(μ, G), so its acceptance ratio
//! is the likelihood ratio alone. Kernels 2 and 3 are symmetric random walks
//! and add the Gaussian prior log-ratio.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    clamp_prob, dot, log_prior_density, Dataset, Observation, RandomEffect, Subject, Theta,
};
use crate::numerics::rng::{sample_beta, sample_normal, Purpose, RngStream};
use crate::numerics::special::{expit, ln_beta, ln_gamma};
use crate::numerics::Mat2;

/// Eigenvalue bounds for the random-walk covariance.
pub const OMEGA_MIN: f64 = 1e-6;
pub const OMEGA_MAX: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    /// Target p(φᵢ | Yᵢ; θ) directly.
    Original,
    /// Target p(φᵢ | Yᵢ, wᵢ; θ) and Gibbs-refresh the latent probabilities w.
    Augmented,
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(SamplerMode::Original),
            "augmented" => Ok(SamplerMode::Augmented),
            other => Err(Error::Config(format!("unknown sampler mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    /// Independence proposal from N(μ, G).
    Prior,
    /// Bivariate random walk N(φ, Ω).
    RandomWalk,
    /// Standard-normal perturbation of one randomly chosen component.
    Univariate,
}

impl KernelKind {
    fn index(self) -> usize {
        match self {
            KernelKind::Prior => 0,
            KernelKind::RandomWalk => 1,
            KernelKind::Univariate => 2,
        }
    }

    pub fn is_symmetric(self) -> bool {
        !matches!(self, KernelKind::Prior)
    }
}

/// Number of updates per SAEM iteration for each kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSchedule {
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
}

impl Default for KernelSchedule {
    fn default() -> Self {
        Self {
            m1: 2,
            m2: 2,
            m3: 2,
        }
    }
}

impl KernelSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.m1 + self.m2 + self.m3 == 0 {
            return Err(Error::Config(
                "kernel schedule needs m1 + m2 + m3 >= 1".into(),
            ));
        }
        Ok(())
    }

    fn steps(&self) -> impl Iterator<Item = KernelKind> {
        std::iter::repeat_n(KernelKind::Prior, self.m1)
            .chain(std::iter::repeat_n(KernelKind::RandomWalk, self.m2))
            .chain(std::iter::repeat_n(KernelKind::Univariate, self.m3))
    }
}

/// Accepted / proposed counts per kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptTally {
    pub accepted: [u64; 3],
    pub proposed: [u64; 3],
}

impl AcceptTally {
    pub fn rate(&self, kind: KernelKind) -> Option<f64> {
        let i = kind.index();
        (self.proposed[i] > 0).then(|| self.accepted[i] as f64 / self.proposed[i] as f64)
    }

    fn record(&mut self, kind: KernelKind, accepted: bool) {
        self.proposed[kind.index()] += 1;
        if accepted {
            self.accepted[kind.index()] += 1;
        }
    }

    pub fn merge(&mut self, other: &AcceptTally) {
        for k in 0..3 {
            self.accepted[k] += other.accepted[k];
            self.proposed[k] += other.proposed[k];
        }
    }
}

/// One subject's latent state within a chain, with the stream that drives it.
#[derive(Debug, Clone)]
pub struct SubjectState {
    pub re: RandomEffect,
    /// Latent Beta probabilities, `Some` exactly where `y > 0` (augmented mode only).
    pub w: Option<Vec<Option<f64>>>,
    pub stream: RngStream,
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub subjects: Vec<SubjectState>,
    /// Counts from the most recent sweep.
    pub last: AcceptTally,
    /// Counts accumulated over all sweeps.
    pub total: AcceptTally,
    pub omega: Mat2,
}

impl ChainState {
    /// Initial chain: random effects drawn from the prior at `theta`, latent
    /// probabilities (augmented mode) at (y + ½)/(s + 1), Ω = G/2.
    pub fn initialize(
        theta: &Theta,
        data: &Dataset,
        chain: usize,
        seed: u64,
        mode: SamplerMode,
    ) -> Result<Self> {
        let g = theta.g();
        let mut subjects = Vec::with_capacity(data.n_subjects());
        for (i, subj) in data.subjects.iter().enumerate() {
            let mut init = RngStream::for_purpose(seed, Purpose::Init, chain as u64, i as u64);
            let re = RandomEffect::from(sample_normal(&mut init, theta.mu(), &g)?);
            let w = match mode {
                SamplerMode::Original => None,
                SamplerMode::Augmented => Some(initial_w(subj)),
            };
            subjects.push(SubjectState {
                re,
                w,
                stream: RngStream::for_purpose(seed, Purpose::Chain, chain as u64, i as u64),
            });
        }
        Ok(Self {
            subjects,
            last: AcceptTally::default(),
            total: AcceptTally::default(),
            omega: g.scale(0.5),
        })
    }

    pub fn random_effects(&self) -> Vec<RandomEffect> {
        self.subjects.iter().map(|s| s.re).collect()
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.subjects.len() != data.n_subjects() {
            return Err(Error::State("chain has wrong number of subjects".into()));
        }
        if self.omega.cholesky_psd().is_err() {
            return Err(Error::State(
                "proposal covariance is not positive semi-definite".into(),
            ));
        }
        for (st, subj) in self.subjects.iter().zip(&data.subjects) {
            if let Some(w) = &st.w {
                check_w(w, subj)?;
            }
        }
        Ok(())
    }
}

fn initial_w(subj: &Subject) -> Vec<Option<f64>> {
    subj.observations
        .iter()
        .map(|o| {
            o.is_positive()
                .then(|| (o.y as f64 + 0.5) / (o.s as f64 + 1.0))
        })
        .collect()
}

fn check_w(w: &[Option<f64>], subj: &Subject) -> Result<()> {
    if w.len() != subj.observations.len() {
        return Err(Error::State(format!(
            "subject {}: latent vector has wrong length",
            subj.id
        )));
    }
    for (wt, o) in w.iter().zip(&subj.observations) {
        match (wt, o.is_positive()) {
            (Some(v), true) if *v > 0.0 && *v < 1.0 => {}
            (None, false) => {}
            (Some(v), true) => {
                return Err(Error::State(format!(
                    "subject {}: latent probability {v} outside (0, 1)",
                    subj.id
                )))
            }
            (None, true) => {
                return Err(Error::State(format!(
                    "subject {}: missing latent probability",
                    subj.id
                )))
            }
            (Some(_), false) => {
                return Err(Error::State(format!(
                    "subject {}: latent probability on a zero count",
                    subj.id
                )))
            }
        }
    }
    Ok(())
}

pub fn propose_kern1(stream: &mut RngStream, theta: &Theta) -> Result<RandomEffect> {
    Ok(RandomEffect::from(sample_normal(
        stream,
        theta.mu(),
        &theta.g(),
    )?))
}

pub fn propose_kern2(
    stream: &mut RngStream,
    current: &RandomEffect,
    omega: &Mat2,
) -> Result<RandomEffect> {
    Ok(RandomEffect::from(sample_normal(
        stream,
        current.as_array(),
        omega,
    )?))
}

pub fn propose_kern3(stream: &mut RngStream, current: &RandomEffect) -> RandomEffect {
    let first = stream.uniform() < 0.5;
    let step = stream.standard_normal();
    let mut cand = *current;
    if first {
        cand.a += step;
    } else {
        cand.b += step;
    }
    cand
}

fn prior_log_ratio(theta: &Theta, current: &RandomEffect, candidate: &RandomEffect) -> f64 {
    let qf = |re: &RandomEffect| {
        let da = re.a - theta.a;
        let db = re.b - theta.b;
        da * da / theta.sigma1_sq + db * db / theta.sigma2_sq
    };
    -0.5 * (qf(candidate) - qf(current))
}

/// Log acceptance ratio for the original (non-augmented) target.
pub fn log_accept_original(
    theta: &Theta,
    subject: &Subject,
    current: &RandomEffect,
    candidate: &RandomEffect,
    kind: KernelKind,
) -> Result<f64> {
    theta.validate()?;
    let phi = theta.phi;
    let mut delta = 0.0;
    for o in &subject.observations {
        let p = p_for(theta, current, o)?;
        let p_hat = p_for(theta, candidate, o)?;
        if o.y > 0 {
            let u = clamp_prob(expit(current.b + dot(&o.z, &theta.beta)));
            let u_hat = clamp_prob(expit(candidate.b + dot(&o.z, &theta.beta)));
            let (yf, sf) = (o.y as f64, o.s as f64);
            let posterior = ln_beta(yf + u_hat * phi, sf - yf + (1.0 - u_hat) * phi)
                - ln_beta(yf + u * phi, sf - yf + (1.0 - u) * phi);
            let prior =
                ln_beta(u_hat * phi, (1.0 - u_hat) * phi) - ln_beta(u * phi, (1.0 - u) * phi);
            delta += posterior - prior + (p_hat / p).ln();
        } else {
            delta += ((1.0 - p_hat) / (1.0 - p)).ln();
        }
    }
    if kind.is_symmetric() {
        delta += prior_log_ratio(theta, current, candidate);
    }
    Ok(delta)
}

/// Log acceptance ratio for the augmented target conditional on `w`.
pub fn log_accept_augmented(
    theta: &Theta,
    subject: &Subject,
    w: &[Option<f64>],
    current: &RandomEffect,
    candidate: &RandomEffect,
    kind: KernelKind,
) -> Result<f64> {
    theta.validate()?;
    check_w(w, subject)?;
    let phi = theta.phi;
    let mut delta = 0.0;
    for (o, wt) in subject.observations.iter().zip(w) {
        let p = p_for(theta, current, o)?;
        let p_hat = p_for(theta, candidate, o)?;
        match wt {
            Some(w) => {
                let u = clamp_prob(expit(current.b + dot(&o.z, &theta.beta)));
                let u_hat = clamp_prob(expit(candidate.b + dot(&o.z, &theta.beta)));
                let gamma_terms = ln_gamma(u * phi) + ln_gamma((1.0 - u) * phi)
                    - ln_gamma(u_hat * phi)
                    - ln_gamma((1.0 - u_hat) * phi);
                delta += gamma_terms + (p_hat / p).ln() + phi * (u_hat - u) * (w / (1.0 - w)).ln();
            }
            None => delta += ((1.0 - p_hat) / (1.0 - p)).ln(),
        }
    }
    if kind.is_symmetric() {
        delta += prior_log_ratio(theta, current, candidate);
    }
    Ok(delta)
}

fn p_for(theta: &Theta, re: &RandomEffect, o: &Observation) -> Result<f64> {
    if o.x.len() != theta.alpha.len() || o.z.len() != theta.beta.len() {
        return Err(Error::shape("observation covariates do not match theta"));
    }
    Ok(clamp_prob(expit(re.a + dot(&o.x, &theta.alpha))))
}

/// Draw wᵢₜ from its Beta full conditional Beta(y + uφ, s − y + (1 − u)φ).
pub fn gibbs_update_w(
    stream: &mut RngStream,
    theta: &Theta,
    re: &RandomEffect,
    obs: &Observation,
) -> Result<f64> {
    if obs.y == 0 {
        return Err(Error::State(
            "latent probability is only defined for positive counts".into(),
        ));
    }
    let u = clamp_prob(expit(re.b + dot(&obs.z, &theta.beta)));
    let (yf, sf) = (obs.y as f64, obs.s as f64);
    sample_beta(stream, yf + u * theta.phi, sf - yf + (1.0 - u) * theta.phi)
}

/// Per-subject log-target split into the part that depends on aᵢ and the part
/// that depends on bᵢ, with covariate offsets fixed for one sweep. Differences
/// of these sums reproduce the acceptance ratios above.
struct SubjectTarget<'a> {
    subject: &'a Subject,
    x_off: Vec<f64>,
    z_off: Vec<f64>,
    phi: f64,
    w: Option<&'a [Option<f64>]>,
}

impl<'a> SubjectTarget<'a> {
    fn new(theta: &Theta, subject: &'a Subject, w: Option<&'a [Option<f64>]>) -> Self {
        let x_off = subject
            .observations
            .iter()
            .map(|o| dot(&o.x, &theta.alpha))
            .collect();
        let z_off = subject
            .observations
            .iter()
            .map(|o| dot(&o.z, &theta.beta))
            .collect();
        Self {
            subject,
            x_off,
            z_off,
            phi: theta.phi,
            w,
        }
    }

    fn zero_part(&self, a: f64) -> f64 {
        let mut acc = 0.0;
        for (o, off) in self.subject.observations.iter().zip(&self.x_off) {
            let p = clamp_prob(expit(a + off));
            acc += if o.y > 0 { p.ln() } else { (1.0 - p).ln() };
        }
        acc
    }

    fn count_part(&self, b: f64) -> f64 {
        let phi = self.phi;
        let mut acc = 0.0;
        for (t, (o, off)) in self
            .subject
            .observations
            .iter()
            .zip(&self.z_off)
            .enumerate()
        {
            if o.y == 0 {
                continue;
            }
            let u = clamp_prob(expit(b + off));
            let (ap, bp) = (u * phi, (1.0 - u) * phi);
            acc -= ln_gamma(ap) + ln_gamma(bp);
            match self.w {
                None => {
                    let (yf, sf) = (o.y as f64, o.s as f64);
                    acc += ln_gamma(yf + ap) + ln_gamma(sf - yf + bp);
                }
                Some(w) => {
                    let wt = w[t].expect("latent probability present for positive count");
                    acc += ap * (wt / (1.0 - wt)).ln();
                }
            }
        }
        acc
    }
}

/// Cholesky factor of the proposal covariances, fixed for one sweep.
struct Proposals {
    mu: [f64; 2],
    g: Mat2,
    omega: Mat2,
}

/// One simulation step for one chain: for each subject run the kernel cycle,
/// then (augmented mode) refresh the latent probabilities.
pub fn mh_sweep(
    theta: &Theta,
    data: &Dataset,
    state: &mut ChainState,
    schedule: &KernelSchedule,
    mode: SamplerMode,
) -> Result<()> {
    theta.validate()?;
    if state.subjects.len() != data.n_subjects() {
        return Err(Error::State("chain has wrong number of subjects".into()));
    }
    let props = Proposals {
        mu: theta.mu(),
        g: theta.g(),
        omega: state.omega,
    };
    let tallies: Vec<Result<AcceptTally>> = state
        .subjects
        .par_iter_mut()
        .zip(data.subjects.par_iter())
        .map(|(st, subj)| sweep_subject(theta, subj, st, schedule, mode, &props))
        .collect();
    let mut last = AcceptTally::default();
    for t in tallies {
        last.merge(&t?);
    }
    state.last = last;
    state.total.merge(&last);
    Ok(())
}

fn sweep_subject(
    theta: &Theta,
    subj: &Subject,
    st: &mut SubjectState,
    schedule: &KernelSchedule,
    mode: SamplerMode,
    props: &Proposals,
) -> Result<AcceptTally> {
    let mut tally = AcceptTally::default();
    match (mode, &st.w) {
        (SamplerMode::Augmented, None) => {
            return Err(Error::State(format!(
                "subject {}: augmented mode without latent probabilities",
                subj.id
            )))
        }
        (SamplerMode::Augmented, Some(w)) => check_w(w, subj)?,
        (SamplerMode::Original, _) => {}
    }
    {
        let w_view = match mode {
            SamplerMode::Original => None,
            SamplerMode::Augmented => st.w.as_deref(),
        };
        let target = SubjectTarget::new(theta, subj, w_view);
        let mut cur = st.re;
        let mut za = target.zero_part(cur.a);
        let mut zb = target.count_part(cur.b);
        for kind in schedule.steps() {
            let cand = match kind {
                KernelKind::Prior => {
                    RandomEffect::from(sample_normal(&mut st.stream, props.mu, &props.g)?)
                }
                KernelKind::RandomWalk => propose_kern2(&mut st.stream, &cur, &props.omega)?,
                KernelKind::Univariate => propose_kern3(&mut st.stream, &cur),
            };
            let za_c = if cand.a == cur.a {
                za
            } else {
                target.zero_part(cand.a)
            };
            let zb_c = if cand.b == cur.b {
                zb
            } else {
                target.count_part(cand.b)
            };
            let mut delta = (za_c - za) + (zb_c - zb);
            if kind.is_symmetric() {
                delta += prior_log_ratio(theta, &cur, &cand);
            }
            let u = st.stream.uniform_open();
            let accept = delta.is_finite() && u.ln() < delta;
            if accept {
                cur = cand;
                za = za_c;
                zb = zb_c;
            }
            tally.record(kind, accept);
        }
        st.re = cur;
    }
    if mode == SamplerMode::Augmented {
        let re = st.re;
        let stream = &mut st.stream;
        let w = st.w.as_mut().expect("checked above");
        for (wt, o) in w.iter_mut().zip(&subj.observations) {
            if o.y > 0 {
                *wt = Some(gibbs_update_w(stream, theta, &re, o)?);
            }
        }
    }
    Ok(tally)
}

/// Robbins–Monro scaling of a proposal covariance toward a target acceptance rate.
pub fn adapt_scale(omega: &Mat2, observed_rate: f64, target_rate: f64, gamma: f64) -> Mat2 {
    omega
        .scale((gamma * (observed_rate - target_rate)).exp())
        .clamp_eigenvalues(OMEGA_MIN, OMEGA_MAX)
}

/// Adapt a chain's random-walk covariance from its last sweep's kernel-2 rate.
pub fn adapt_omega(state: &mut ChainState, target_rate: f64, gamma: f64) {
    if let Some(rate) = state.last.rate(KernelKind::RandomWalk) {
        state.omega = adapt_scale(&state.omega, rate, target_rate, gamma);
    }
}

/// Log density of a subject's latent probabilities given φᵢ (Beta terms only),
/// exposed for independent checks of the augmented factorization.
pub fn log_latent_density(
    theta: &Theta,
    re: &RandomEffect,
    subject: &Subject,
    w: &[Option<f64>],
) -> Result<f64> {
    check_w(w, subject)?;
    let mut acc = 0.0;
    for (o, wt) in subject.observations.iter().zip(w) {
        if let Some(w) = wt {
            let u = clamp_prob(expit(re.b + dot(&o.z, &theta.beta)));
            let (ap, bp) = (u * theta.phi, (1.0 - u) * theta.phi);
            acc += (ap - 1.0) * w.ln() + (bp - 1.0) * (1.0 - w).ln() - ln_beta(ap, bp);
        }
    }
    Ok(acc)
}

/// ln N(φᵢ; μ, G) re-exported for samplers and oracles.
pub fn log_prior(theta: &Theta, re: &RandomEffect) -> f64 {
    log_prior_density(theta, re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Observation;

    fn small_subject() -> Subject {
        Subject {
            id: "s".into(),
            observations: vec![
                Observation::new(0, 10, vec![1.0], vec![1.0], 1).unwrap(),
                Observation::new(3, 10, vec![0.0], vec![0.0], 2).unwrap(),
            ],
        }
    }

    fn theta() -> Theta {
        Theta {
            phi: 3.0,
            a: -0.2,
            b: 0.1,
            alpha: vec![0.4],
            beta: vec![-0.3],
            sigma1_sq: 0.5,
            sigma2_sq: 0.3,
        }
    }

    #[test]
    fn identical_states_give_zero() {
        let t = theta();
        let s = small_subject();
        let re = RandomEffect::new(0.3, -0.4);
        let w = initial_w(&s);
        for kind in [
            KernelKind::Prior,
            KernelKind::RandomWalk,
            KernelKind::Univariate,
        ] {
            assert_eq!(log_accept_original(&t, &s, &re, &re, kind).unwrap(), 0.0);
            assert_eq!(
                log_accept_augmented(&t, &s, &w, &re, &re, kind).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn augmented_requires_latent_values() {
        let t = theta();
        let s = small_subject();
        let re = RandomEffect::new(0.0, 0.0);
        let missing = vec![None, None];
        assert!(matches!(
            log_accept_augmented(&t, &s, &missing, &re, &re, KernelKind::Prior),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn gibbs_rejects_zero_count() {
        let t = theta();
        let mut stream = RngStream::new(1, 1);
        let o = Observation::new(0, 5, vec![0.0], vec![0.0], 1).unwrap();
        assert!(gibbs_update_w(&mut stream, &t, &RandomEffect::new(0.0, 0.0), &o).is_err());
    }

    #[test]
    fn kern3_moves_exactly_one_component() {
        let mut stream = RngStream::new(5, 5);
        let cur = RandomEffect::new(0.25, -0.75);
        for _ in 0..1000 {
            let c = propose_kern3(&mut stream, &cur);
            let moved = (c.a != cur.a) as u8 + (c.b != cur.b) as u8;
            assert_eq!(moved, 1);
        }
    }

    #[test]
    fn degenerate_random_walk_is_identity() {
        let mut stream = RngStream::new(5, 6);
        let cur = RandomEffect::new(1.0, 2.0);
        assert_eq!(
            propose_kern2(&mut stream, &cur, &Mat2::zeros()).unwrap(),
            cur
        );
        let bad = Mat2::new([[1.0, 3.0], [3.0, 1.0]]);
        assert!(propose_kern2(&mut stream, &cur, &bad).is_err());
    }

    #[test]
    fn omega_adaptation_direction() {
        let om = Mat2::diag(0.2, 0.1);
        assert_eq!(adapt_scale(&om, 0.3, 0.3, 1.0), om);
        let up = adapt_scale(&om, 0.6, 0.3, 1.0).sym_eigenvalues();
        let before = om.sym_eigenvalues();
        assert!(up[0] > before[0] && up[1] > before[1]);
        let down = adapt_scale(&om, 0.0, 0.3, 1.0).sym_eigenvalues();
        assert!(down[0] < before[0] && down[1] < before[1]);
        let capped = adapt_scale(&Mat2::diag(1e4, 1e4), 1.0, 0.3, 1.0);
        assert_eq!(capped, Mat2::diag(1e4, 1e4));
    }

    #[test]
    fn empty_schedule_refreshes_latents_only() {
        let t = theta();
        let s = small_subject();
        let data = Dataset::new(vec![s], 1, 1).unwrap();
        let mut chain = ChainState::initialize(&t, &data, 0, 11, SamplerMode::Augmented).unwrap();
        let before = chain.random_effects();
        let w_before = chain.subjects[0].w.clone();
        let sched = KernelSchedule {
            m1: 0,
            m2: 0,
            m3: 0,
        };
        assert!(sched.validate().is_err());
        mh_sweep(&t, &data, &mut chain, &sched, SamplerMode::Augmented).unwrap();
        assert_eq!(chain.random_effects(), before);
        assert_ne!(chain.subjects[0].w, w_before);
        chain.validate(&data).unwrap();
    }
}
