//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//! chains = 5
//! k1 = 750
//! k2 = 250
//! m1 = 2
//! m2 = 2
//! m3 = 2
//! mode = "original"        # or "augmented"
//! is_nu = 5.0
//! is_k = 500
//! target_accept = 0.3
//! se_method = "louis"      # or "none"
//! x_columns = ["x_1"]      # default: every x_* column
//! z_columns = ["z_1"]      # default: every z_* column
//!
//! # Standard deviations here are on the sigma scale; they are squared internally.
//! [init_theta]
//! phi = 18.0
//! a = -0.3
//! b = 0.2
//! alpha = [0.8]
//! beta = [0.1]
//! sigma1 = 0.48
//! sigma2 = 0.72
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::ISConfig;
use crate::model::Theta;
use crate::saem::{FitConfig, SeMethod, StepSchedule};
use crate::sampler::{KernelSchedule, SamplerMode};

use super::io::ColumnSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitTheta {
    pub phi: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl InitTheta {
    pub fn to_theta(&self) -> Result<Theta> {
        let t = Theta {
            phi: self.phi,
            a: self.a,
            b: self.b,
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            sigma1_sq: self.sigma1 * self.sigma1,
            sigma2_sq: self.sigma2 * self.sigma2,
        };
        t.validate()
            .map_err(|e| Error::Config(format!("init_theta: {e}")))?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Defaults to the setting's chain count (10 for setting 4), else 5.
    pub chains: Option<usize>,
    pub k1: usize,
    pub k2: usize,
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
    pub mode: SamplerMode,
    pub is_nu: f64,
    pub is_k: usize,
    pub target_accept: f64,
    pub se_method: SeMethod,
    pub init_theta: Option<InitTheta>,
    pub x_columns: Option<Vec<String>>,
    pub z_columns: Option<Vec<String>>,
    /// Overrides for simulated data sizes (simulate and bench).
    pub n_subjects: Option<usize>,
    pub t_per_subject: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fc = FitConfig::default();
        let is = ISConfig::default();
        Self {
            seed: fc.seed,
            chains: None,
            k1: fc.schedule.k1,
            k2: fc.schedule.k2,
            m1: fc.kernels.m1,
            m2: fc.kernels.m2,
            m3: fc.kernels.m3,
            mode: fc.mode,
            is_nu: is.nu,
            is_k: is.k_samples,
            target_accept: fc.target_accept,
            se_method: fc.se_method,
            init_theta: None,
            x_columns: None,
            z_columns: None,
            n_subjects: None,
            t_per_subject: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == Some(0) {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        if self.n_subjects == Some(0) || self.t_per_subject == Some(0) {
            return Err(Error::Config(
                "n_subjects and t_per_subject must be positive".into(),
            ));
        }
        if let Some(t) = &self.init_theta {
            t.to_theta()?;
        }
        self.fit_config(5).validate()?;
        self.is_config().validate()
    }

    pub fn fit_config(&self, default_chains: usize) -> FitConfig {
        FitConfig {
            schedule: StepSchedule {
                k1: self.k1,
                k2: self.k2,
            },
            chains: self.chains.unwrap_or(default_chains),
            kernels: KernelSchedule {
                m1: self.m1,
                m2: self.m2,
                m3: self.m3,
            },
            mode: self.mode,
            seed: self.seed,
            target_accept: self.target_accept,
            se_method: self.se_method,
            ..FitConfig::default()
        }
    }

    pub fn is_config(&self) -> ISConfig {
        ISConfig {
            nu: self.is_nu,
            k_samples: self.is_k,
        }
    }

    pub fn column_schema(&self) -> ColumnSchema {
        ColumnSchema {
            x_columns: self.x_columns.clone(),
            z_columns: self.z_columns.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_parse() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.k1, c.k2, c.is_k), (750, 250, 500));
        let c = RunConfig::from_toml(
            "seed = 3\nmode = \"augmented\"\n[init_theta]\nphi = 2.0\na = 0.0\nb = 0.0\nalpha = []\nbeta = []\nsigma1 = 0.5\nsigma2 = 2.0\n",
        )
        .unwrap();
        assert_eq!(c.mode, SamplerMode::Augmented);
        assert_eq!(c.init_theta.unwrap().to_theta().unwrap().sigma2_sq, 4.0);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("chains = 0").is_err());
        assert!(RunConfig::from_toml("target_accept = 1.5").is_err());
        assert!(RunConfig::from_toml("unknown_key = 1").is_err());
        assert!(RunConfig::from_toml("m1 = 0\nm2 = 0\nm3 = 0").is_err());
    }
}
