//! Gibbs sampler for the hierarchical transport model.
//!
//! Unknowns are the interior state `X` over `(time, level, cell)`, the ghost
//! ring state `X^B`, and per-level parameters `m`, `f`, `sigma2_eta`,
//! `sigma2_B`. Every full conditional is a scalar Gaussian or inverse gamma.

pub mod conjugate;
pub mod diagnostics;
pub mod forward;
mod gibbs;
mod model;

pub use conjugate::{gaussian_fuse, Factor, Gaussian, GaussianAccumulator, InverseGamma};
pub use gibbs::{fit_bhm, run_chain, run_gibbs, BhmConfig, ChainOutput, ParamDraw, PosteriorSummary};
pub use model::{init_chain, ChainState, Model, RegressionStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obs::ObservationSet;

/// Per-level stochastic parameters. `f[0]` is identically zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub m: Vec<f64>,
    pub f: Vec<f64>,
    pub sigma2_eta: Vec<f64>,
    pub sigma2_b: Vec<f64>,
}

impl ModelParams {
    pub fn uniform(n_levels: usize, m: f64, f: f64, sigma2_eta: f64, sigma2_b: f64) -> Self {
        let mut fv = vec![f; n_levels];
        if let Some(f0) = fv.first_mut() {
            *f0 = 0.0;
        }
        ModelParams {
            m: vec![m; n_levels],
            f: fv,
            sigma2_eta: vec![sigma2_eta; n_levels],
            sigma2_b: vec![sigma2_b; n_levels],
        }
    }

    pub fn n_levels(&self) -> usize {
        self.m.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.m.len();
        if self.f.len() != l || self.sigma2_eta.len() != l || self.sigma2_b.len() != l {
            return Err(Error::Dimension("parameter vectors differ in length".into()));
        }
        if self.f.first().is_some_and(|f| *f != 0.0) {
            return Err(Error::config("params.f[0]", "bottom-level forcing must be zero"));
        }
        if self.sigma2_eta.iter().chain(&self.sigma2_b).any(|v| !(*v > 0.0)) {
            return Err(Error::config("params.sigma2", "variances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub m0: f64,
    pub sigma2_m: f64,
    pub f0: f64,
    pub sigma2_f: f64,
    pub q_eta: f64,
    pub r_eta: f64,
    pub q_b: f64,
    pub r_b: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            m0: 1.0,
            sigma2_m: 1e-3,
            f0: 0.0,
            sigma2_f: 1e-3,
            q_eta: 2.8,
            r_eta: 0.28,
            q_b: 2.8,
            r_b: 0.28,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("priors.sigma2_m", self.sigma2_m),
            ("priors.sigma2_f", self.sigma2_f),
            ("priors.q_eta", self.q_eta),
            ("priors.r_eta", self.r_eta),
            ("priors.q_b", self.q_b),
            ("priors.r_b", self.r_b),
        ];
        for (path, v) in checks {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(path, format!("must be positive, got {v}")));
            }
        }
        if !self.m0.is_finite() || !self.f0.is_finite() {
            return Err(Error::config("priors", "prior means must be finite"));
        }
        Ok(())
    }

    pub fn eta_prior(&self) -> InverseGamma {
        InverseGamma {
            shape: self.q_eta,
            rate: self.r_eta,
        }
    }

    pub fn boundary_prior(&self) -> InverseGamma {
        InverseGamma {
            shape: self.q_b,
            rate: self.r_b,
        }
    }
}

/// Gaussian priors on the first time slice: a per-level climatology for the
/// interior and a diffuse prior for the ghost ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePrior {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub ghost_sd: Vec<f64>,
}

/// Floor on the climatology spread, ppb.
const MIN_PRIOR_SD: f64 = 1.0;

impl StatePrior {
    /// Mean from the level's observations (falling back to all observations);
    /// spread 3x (interior) and 10x (ghost) the observed standard deviation.
    pub fn from_observations(obs: &ObservationSet) -> Result<Self> {
        let global = obs.global_stats();
        if global.count == 0 {
            return Err(Error::MissingArtifact("observation set is empty".into()));
        }
        let mut mean = Vec::with_capacity(obs.n_levels);
        let mut sd = Vec::with_capacity(obs.n_levels);
        let mut ghost_sd = Vec::with_capacity(obs.n_levels);
        for l in 0..obs.n_levels {
            let s = obs.level_stats(l);
            let (mu, spread) = if s.count == 0 {
                (global.mean, global.sd)
            } else if s.count == 1 {
                (s.mean, global.sd)
            } else {
                (s.mean, s.sd)
            };
            let spread = spread.max(MIN_PRIOR_SD);
            mean.push(mu);
            sd.push(3.0 * spread);
            ghost_sd.push(10.0 * spread);
        }
        Ok(StatePrior { mean, sd, ghost_sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Exponential correlation range of the initial draw, in cells.
    pub range_cells: f64,
    /// Multiplier on the per-level observed sd; zero gives a flat start.
    pub sd_scale: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            range_cells: 5.0,
            sd_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Inner `m`/`f` alternations per sweep; they are cheap once the
    /// regression cross products are formed and the pair is highly correlated.
    pub mf_inner: usize,
    pub init: InitConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iter: 6000,
            burn_in: 150,
            thin: 10,
            mf_inner: 200,
            init: InitConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::config("sampler.burn_in", "must be smaller than n_iter"));
        }
        if self.mf_inner == 0 {
            return Err(Error::config("sampler.mf_inner", "must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::config("sampler.thin", "must be at least 1"));
        }
        if !(self.init.range_cells > 0.0) || !(self.init.sd_scale >= 0.0) {
            return Err(Error::config("sampler.init", "range must be positive and sd scale nonnegative"));
        }
        Ok(())
    }

    pub fn is_retained(&self, iter: usize) -> bool {
        iter >= self.burn_in && (iter - self.burn_in) % self.thin == 0
    }
}
