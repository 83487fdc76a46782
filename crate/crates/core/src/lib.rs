//! Zero-inflated beta-binomial mixed effects regression.
//!
//! Maximum-likelihood estimation by stochastic approximation EM with
//! Metropolis–Hastings simulation of the random intercepts, importance-sampling
//! log-likelihoods, Louis-type standard errors, Wald and likelihood-ratio
//! tests, and a simulation-study harness.

pub mod cli;
pub mod error;
pub mod inference;
pub mod likelihood;
pub mod model;
pub mod numerics;
pub mod saem;
pub mod sampler;
pub mod simstudy;

pub use error::{Error, Result};
