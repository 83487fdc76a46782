//! Step sizes and the stochastic-approximation accumulators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{score_and_hessian, Dataset, RandomEffect, Theta};
use crate::numerics::{Mat2, SquareMatrix};

/// Floor applied to the diagonal of G and to conditional variances.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// γ_q = 1 during the first K₁ iterations, then 1/(q − K₁).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub k1: usize,
    pub k2: usize,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { k1: 750, k2: 250 }
    }
}

impl StepSchedule {
    pub fn total(&self) -> usize {
        self.k1 + self.k2
    }

    /// Step size at 1-based iteration `q`.
    pub fn gamma(&self, q: usize) -> f64 {
        if q <= self.k1 {
            1.0
        } else {
            1.0 / (q - self.k1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    pub f1: [f64; 2],
    pub f2: Mat2,
}

impl Default for SufficientStats {
    fn default() -> Self {
        Self {
            f1: [0.0; 2],
            f2: Mat2::zeros(),
        }
    }
}

/// F₁ ← F₁ + γ(Σₗ Σᵢ φᵢ / m − F₁) and likewise for F₂ with φᵢφᵢᵀ.
pub fn sa_update_stats(
    stats: &SufficientStats,
    chains: &[Vec<RandomEffect>],
    gamma: f64,
) -> SufficientStats {
    assert!(!chains.is_empty(), "at least one chain is required");
    let m = chains.len() as f64;
    let mut s1 = [0.0; 2];
    let mut s2 = [[0.0; 2]; 2];
    for chain in chains {
        for re in chain {
            let v = re.as_array();
            for r in 0..2 {
                s1[r] += v[r];
                for c in 0..2 {
                    s2[r][c] += v[r] * v[c];
                }
            }
        }
    }
    let mut out = *stats;
    for r in 0..2 {
        out.f1[r] += gamma * (s1[r] / m - stats.f1[r]);
        for c in 0..2 {
            out.f2.0[r][c] += gamma * (s2[r][c] / m - stats.f2.0[r][c]);
        }
    }
    out
}

/// μ = F₁/N and G = diag(F₂/N − F₁F₁ᵀ/N²), floored.
pub fn mstep_gaussian(stats: &SufficientStats, n_subjects: usize) -> ([f64; 2], Mat2) {
    assert!(n_subjects >= 1, "need at least one subject");
    let n = n_subjects as f64;
    let mu = [stats.f1[0] / n, stats.f1[1] / n];
    let var = |k: usize| (stats.f2.0[k][k] / n - mu[k] * mu[k]).max(VARIANCE_FLOOR);
    (mu, Mat2::diag(var(0), var(1)))
}

/// Running per-subject first and second moments of φᵢ given the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMoments {
    pub mean: Vec<[f64; 2]>,
    pub second: Vec<[f64; 2]>,
}

impl ConditionalMoments {
    pub fn zeros(n_subjects: usize) -> Self {
        Self {
            mean: vec![[0.0; 2]; n_subjects],
            second: vec![[0.0; 2]; n_subjects],
        }
    }

    pub fn variance(&self) -> Vec<[f64; 2]> {
        self.mean
            .iter()
            .zip(&self.second)
            .map(|(m, s)| {
                [
                    (s[0] - m[0] * m[0]).max(VARIANCE_FLOOR),
                    (s[1] - m[1] * m[1]).max(VARIANCE_FLOOR),
                ]
            })
            .collect()
    }
}

pub fn update_conditional_moments(
    moments: &ConditionalMoments,
    chains: &[Vec<RandomEffect>],
    gamma: f64,
) -> ConditionalMoments {
    assert!(!chains.is_empty(), "at least one chain is required");
    let m = chains.len() as f64;
    let mut out = moments.clone();
    for i in 0..moments.mean.len() {
        let mut e1 = [0.0; 2];
        let mut e2 = [0.0; 2];
        for chain in chains {
            let v = chain[i].as_array();
            for k in 0..2 {
                e1[k] += v[k];
                e2[k] += v[k] * v[k];
            }
        }
        for k in 0..2 {
            out.mean[i][k] += gamma * (e1[k] / m - moments.mean[i][k]);
            out.second[i][k] += gamma * (e2[k] / m - moments.second[i][k]);
        }
    }
    out
}

/// Stochastic approximation of the observed information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LouisAccumulators {
    pub d: Vec<f64>,
    pub g: SquareMatrix,
    pub h: SquareMatrix,
}

impl LouisAccumulators {
    pub fn zeros(n_params: usize) -> Self {
        Self {
            d: vec![0.0; n_params],
            g: SquareMatrix::zeros(n_params),
            h: SquareMatrix::zeros(n_params),
        }
    }

    /// One update from per-chain complete-data scores and Hessians:
    /// D ← D + γ(s̄ − D), G ← G + γ(mean(∂² + s sᵀ) − G), H = G − D Dᵀ.
    pub fn update(
        &self,
        scores: &[Vec<f64>],
        hessians: &[SquareMatrix],
        gamma: f64,
    ) -> Result<Self> {
        if scores.is_empty() || scores.len() != hessians.len() {
            return Err(Error::shape(
                "need one Hessian per score, at least one chain",
            ));
        }
        let p = self.d.len();
        if scores.iter().any(|s| s.len() != p) || hessians.iter().any(|h| h.dim() != p) {
            return Err(Error::shape("score or Hessian has the wrong dimension"));
        }
        let m = scores.len() as f64;
        let mut s_bar = vec![0.0; p];
        let mut g_bar = SquareMatrix::zeros(p);
        for (s, h) in scores.iter().zip(hessians) {
            for k in 0..p {
                s_bar[k] += s[k] / m;
            }
            g_bar.add_scaled(h, 1.0 / m);
            g_bar.add_outer(s, 1.0 / m);
        }
        let mut d = self.d.clone();
        for k in 0..p {
            d[k] += gamma * (s_bar[k] - d[k]);
        }
        let mut g = self.g.clone();
        g.add_scaled(&g_bar, gamma);
        g.add_scaled(&self.g, -gamma);
        let mut h = g.clone();
        h.add_outer(&d, -1.0);
        Ok(Self { d, g, h })
    }

    /// Covariance approximation (−H)⁻¹.
    pub fn covariance(&self) -> Result<SquareMatrix> {
        self.h.scaled(-1.0).inverse_spd()
    }
}

/// Louis update from the current chains at parameter value `theta`.
pub fn update_louis(
    acc: &LouisAccumulators,
    theta: &Theta,
    chains: &[Vec<RandomEffect>],
    data: &Dataset,
    gamma: f64,
) -> Result<LouisAccumulators> {
    let mut scores = Vec::with_capacity(chains.len());
    let mut hessians = Vec::with_capacity(chains.len());
    for chain in chains {
        let (s, h) = score_and_hessian(theta, chain, data, true)?;
        scores.push(s);
        hessians.push(h.expect("hessian requested"));
    }
    acc.update(&scores, &hessians, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let s = StepSchedule { k1: 3, k2: 4 };
        assert_eq!(s.total(), 7);
        assert_eq!(
            [s.gamma(1), s.gamma(3), s.gamma(4), s.gamma(5), s.gamma(7)],
            [1.0, 1.0, 1.0, 0.5, 0.25]
        );
    }

    #[test]
    fn identical_chains_direct_sum() {
        let chain = vec![RandomEffect::new(1.0, 2.0); 3];
        let out = sa_update_stats(&SufficientStats::default(), &[chain.clone(), chain], 1.0);
        assert_eq!(out.f1, [3.0, 6.0]);
        assert_eq!(out.f2, Mat2::new([[3.0, 6.0], [6.0, 12.0]]));
        assert_eq!(
            sa_update_stats(&out, &[vec![RandomEffect::new(9.0, 9.0); 3]], 0.0),
            out
        );
    }

    #[test]
    fn gaussian_mstep_division_and_floor() {
        let stats = SufficientStats {
            f1: [10.0, -5.0],
            f2: Mat2::diag(20.0, 5.0),
        };
        let (mu, g) = mstep_gaussian(&stats, 5);
        assert_eq!(mu, [2.0, -1.0]);
        assert_eq!(g, Mat2::diag(VARIANCE_FLOOR, VARIANCE_FLOOR));
    }

    #[test]
    fn constant_chain_moments_floor() {
        let chains = vec![vec![RandomEffect::new(0.5, -0.5); 2]; 3];
        let mm = update_conditional_moments(&ConditionalMoments::zeros(2), &chains, 1.0);
        assert_eq!(mm.mean[1], [0.5, -0.5]);
        assert_eq!(mm.variance()[0], [VARIANCE_FLOOR, VARIANCE_FLOOR]);
    }

    #[test]
    fn louis_zero_gamma_and_symmetry() {
        let acc = LouisAccumulators::zeros(2);
        let h = SquareMatrix::from_rows(&[vec![-2.0, 0.3], vec![0.3, -1.0]]).unwrap();
        let s = vec![0.4, -0.1];
        let once = acc.update(&[s.clone()], &[h.clone()], 1.0).unwrap();
        for (x, y) in once.h.as_slice().iter().zip(h.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(once.update(&[vec![5.0, 5.0]], &[h], 0.0).unwrap(), once);
        assert_eq!(once.h.max_asymmetry(), 0.0);
    }
}
