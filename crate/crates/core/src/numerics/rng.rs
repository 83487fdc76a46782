//! Reproducible random streams and the variate generators used by the sampler,
//! the data generators and the importance sampler.
//!
//! A stream is a ChaCha8 generator keyed by a 64-bit seed and positioned on one
//! of its 2^64 independent stream slots. Each (chain, subject) pair owns one
//! stream, so results never depend on how work is scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::numerics::linalg::Mat2;

/// Stream slots are partitioned by purpose so that, for example, the importance
/// sampler never reuses a slot owned by an MCMC chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Chain = 1,
    Init = 2,
    Loglik = 3,
    Generate = 4,
    Replicate = 5,
    Test = 6,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Stream for `purpose` with two indices, e.g. (chain, subject).
    pub fn for_purpose(seed: u64, purpose: Purpose, major: u64, minor: u64) -> Self {
        assert!(
            major < (1 << 28) && minor < (1 << 28),
            "stream index out of range"
        );
        let id = ((purpose as u64) << 56) | (major << 28) | minor;
        Self::new(seed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent child stream, determined only by this stream's identity and
    /// `index` (not by how many draws have been consumed).
    pub fn child(&self, index: u64) -> Self {
        let id = splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)));
        Self::new(self.seed, id)
    }

    /// Uniform on [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.rng.random::<f64>();
            if u > 0.0 {
                return u;
            }
        }
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random::<u64>()
    }

    pub fn uniform_int(&mut self, lo: i64, hi: i64) -> Result<i64> {
        sample_uniform_int(self, lo, hi)
    }

    pub fn binomial(&mut self, n: u32, p: f64) -> Result<u32> {
        let d = Binomial::new(n as u64, p)
            .map_err(|e| Error::domain(format!("binomial({n}, {p}): {e}")))?;
        Ok(d.sample(&mut self.rng) as u32)
    }

    /// Draw from Gamma(shape, 1) returning its natural logarithm; stays finite
    /// for arbitrarily small shapes.
    fn ln_gamma_variate(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            // G(a) = G(a+1) · U^(1/a)
            let g = Gamma::new(shape + 1.0, 1.0).expect("valid gamma shape");
            let x: f64 = g.sample(&mut self.rng);
            x.ln() + self.uniform_open().ln() / shape
        } else {
            let g = Gamma::new(shape, 1.0).expect("valid gamma shape");
            let x: f64 = g.sample(&mut self.rng);
            x.ln()
        }
    }
}

/// SplitMix64 finalizer, used to scatter derived stream identifiers.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw from N(mean, cov) for a 2×2 positive semi-definite covariance.
pub fn sample_normal(stream: &mut RngStream, mean: [f64; 2], cov: &Mat2) -> Result<[f64; 2]> {
    let l = cov.cholesky_psd()?;
    let z0 = stream.standard_normal();
    let z1 = stream.standard_normal();
    Ok([
        mean[0] + l[0][0] * z0,
        mean[1] + l[1][0] * z0 + l[1][1] * z1,
    ])
}

/// Beta(p, q) through two gamma variates, combined in log space.
pub fn sample_beta(stream: &mut RngStream, p: f64, q: f64) -> Result<f64> {
    if !(p > 0.0 && q > 0.0 && p.is_finite() && q.is_finite()) {
        return Err(Error::domain(format!(
            "beta shapes must be positive, got ({p}, {q})"
        )));
    }
    let lx = stream.ln_gamma_variate(p);
    let ly = stream.ln_gamma_variate(q);
    // x / (x + y) = expit(ln x − ln y)
    let w = crate::numerics::special::expit(lx - ly);
    Ok(w.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

pub fn sample_student_t(stream: &mut RngStream, df: f64) -> Result<f64> {
    let t = StudentT::new(df).map_err(|e| Error::domain(format!("student t with df={df}: {e}")))?;
    Ok(t.sample(&mut stream.rng))
}

pub fn sample_uniform_int(stream: &mut RngStream, lo: i64, hi: i64) -> Result<i64> {
    if lo > hi {
        return Err(Error::domain(format!("empty integer range [{lo}, {hi}]")));
    }
    Ok(stream.rng.random_range(lo..=hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_identity_same_sequence() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        let va: Vec<u64> = (0..32).map(|_| a.next_u64()).collect();
        let vb: Vec<u64> = (0..32).map(|_| b.next_u64()).collect();
        assert_eq!(va, vb);
    }

    #[test]
    fn different_streams_differ() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 8);
        let mut c = RngStream::new(43, 7);
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_ne!(x, c.next_u64());
    }

    #[test]
    fn child_ignores_consumption() {
        let a = RngStream::new(1, 2);
        let mut b = a.clone();
        b.next_u64();
        assert_eq!(a.child(3).next_u64(), b.child(3).next_u64());
        assert_ne!(a.child(3).next_u64(), a.child(4).next_u64());
    }

    #[test]
    fn degenerate_normal_returns_mean() {
        let mut s = RngStream::new(0, 0);
        let x = sample_normal(&mut s, [0.0, 0.0], &Mat2::zeros()).unwrap();
        assert_eq!(x, [0.0, 0.0]);
        let y = sample_normal(&mut s, [1.5, -2.0], &Mat2::zeros()).unwrap();
        assert_eq!(y, [1.5, -2.0]);
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let mut s = RngStream::new(0, 0);
        let bad = Mat2::new([[1.0, 2.0], [2.0, 1.0]]);
        assert!(sample_normal(&mut s, [0.0, 0.0], &bad).is_err());
    }

    #[test]
    fn uniform_int_range() {
        let mut s = RngStream::new(3, 1);
        let mut seen_lo = false;
        let mut seen_hi = false;
        for _ in 0..100_000 {
            let v = sample_uniform_int(&mut s, 200, 800).unwrap();
            assert!((200..=800).contains(&v));
            seen_lo |= v == 200;
            seen_hi |= v == 800;
        }
        assert!(seen_lo && seen_hi);
        assert!(sample_uniform_int(&mut s, 3, 2).is_err());
    }

    #[test]
    fn tiny_beta_shapes_stay_interior() {
        let mut s = RngStream::new(9, 9);
        for _ in 0..10_000 {
            let w = sample_beta(&mut s, 1e-3, 2e-3).unwrap();
            assert!(w > 0.0 && w < 1.0);
        }
        assert!(sample_beta(&mut s, 0.0, 1.0).is_err());
    }
}
