use serde::{Deserialize, Serialize};

use super::diagnostics::{summarize, ParamDiagnostics};
use super::model::{init_chain, ChainState, Model};
use super::{ModelParams, PriorConfig, SamplerConfig, StatePrior};
use crate::dynamics::{AdvectionSign, PropagatorSet, WindField};
use crate::error::{Error, Result};
use crate::grid::Grid3D;
use crate::obs::{NoiseModel, ObservationSet};
use crate::seed::{chain_label, rng_for};

/// Smallest reported posterior sd, ppb.
pub const SD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BhmConfig {
    pub priors: PriorConfig,
    pub sampler: SamplerConfig,
    pub noise: NoiseModel,
    pub coupled: bool,
    pub chains: usize,
    pub advection_sign: AdvectionSign,
}

impl Default for BhmConfig {
    fn default() -> Self {
        BhmConfig {
            priors: PriorConfig::default(),
            sampler: SamplerConfig::default(),
            noise: NoiseModel::default(),
            coupled: true,
            chains: 1,
            advection_sign: AdvectionSign::Model,
        }
    }
}

impl BhmConfig {
    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        self.sampler.validate()?;
        if self.chains == 0 {
            return Err(Error::config("bhm.chains", "need at least one chain"));
        }
        if let NoiseModel::PlugIn { frac, floor } = self.noise {
            if !(frac > 0.0) || !(floor > 0.0) {
                return Err(Error::config("bhm.noise", "plug-in fraction and floor must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDraw {
    pub iter: usize,
    pub params: ModelParams,
}

/// Streaming per-cell mean and sum of squared deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Moments {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push(&mut self, xs: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(xs) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    /// Pairwise combination; associative up to rounding.
    pub fn merge(&self, other: &Moments) -> Moments {
        if self.n == 0 {
            return other.clone();
        }
        if other.n == 0 {
            return self.clone();
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let mut out = Moments::new(self.mean.len());
        out.n = self.n + other.n;
        for j in 0..self.mean.len() {
            let d = other.mean[j] - self.mean[j];
            out.mean[j] = self.mean[j] + d * nb / n;
            out.m2[j] = self.m2[j] + other.m2[j] + d * d * na * nb / n;
        }
        out
    }

    pub fn sd(&self) -> Vec<f64> {
        let denom = self.n.saturating_sub(1).max(1) as f64;
        self.m2.iter().map(|s| (s / denom).sqrt().max(SD_FLOOR)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub moments: Moments,
    pub draws: Vec<ParamDraw>,
    pub final_state: ChainState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub retained_per_chain: usize,
    pub params: Vec<ParamDiagnostics>,
    pub negative_means: usize,
}

#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub n_times: usize,
    pub n_levels: usize,
    pub n_cells: usize,
    /// Posterior mean per `(k, l, i)`.
    pub mean: Vec<f64>,
    /// Posterior sd per `(k, l, i)`, floored at [`SD_FLOOR`].
    pub sd: Vec<f64>,
    /// Retained parameter draws, one vector per chain.
    pub chains: Vec<Vec<ParamDraw>>,
    pub diagnostics: Diagnostics,
}

impl PosteriorSummary {
    pub fn idx(&self, k: usize, l: usize, i: usize) -> usize {
        (k * self.n_levels + l) * self.n_cells + i
    }

    /// Pooled retained draws of one parameter, selected by `pick`.
    pub fn pooled(&self, pick: impl Fn(&ModelParams) -> f64) -> Vec<f64> {
        self.chains.iter().flatten().map(|d| pick(&d.params)).collect()
    }
}

/// Runs one chain from `state`, keeping post-burn-in thinned draws.
pub fn run_chain(model: &Model, cfg: &SamplerConfig, mut state: ChainState) -> Result<ChainOutput> {
    cfg.validate()?;
    let mut moments = Moments::new(model.state_len());
    let mut draws = Vec::new();
    for it in 0..cfg.n_iter {
        model.sweep(&mut state)?;
        if cfg.is_retained(it) {
            moments.push(&state.x);
            draws.push(ParamDraw {
                iter: it,
                params: state.params.clone(),
            });
        }
    }
    Ok(ChainOutput {
        moments,
        draws,
        final_state: state,
    })
}

fn param_names(n_levels: usize, coupled: bool) -> Vec<(String, Box<dyn Fn(&ModelParams) -> f64>)> {
    let mut out: Vec<(String, Box<dyn Fn(&ModelParams) -> f64>)> = Vec::new();
    for l in 0..n_levels {
        out.push((format!("m[{l}]"), Box::new(move |p: &ModelParams| p.m[l])));
        if coupled && l > 0 {
            out.push((format!("f[{l}]"), Box::new(move |p: &ModelParams| p.f[l])));
        }
        out.push((format!("sigma2_eta[{l}]"), Box::new(move |p: &ModelParams| p.sigma2_eta[l])));
        out.push((format!("sigma2_B[{l}]"), Box::new(move |p: &ModelParams| p.sigma2_b[l])));
    }
    out
}

/// Runs `n_chains` independent chains (concurrently) and merges them.
/// Chain `c` draws from the sub-stream labeled `chain-<c>` of `master_seed`.
pub fn run_gibbs(
    model: &Model,
    grid: &Grid3D,
    obs: &ObservationSet,
    cfg: &SamplerConfig,
    n_chains: usize,
    master_seed: u64,
) -> Result<PosteriorSummary> {
    cfg.validate()?;
    if n_chains == 0 {
        return Err(Error::config("chains", "need at least one chain"));
    }
    let results: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_chains)
            .map(|c| {
                scope.spawn(move || {
                    let rng = rng_for(master_seed, &chain_label(c));
                    let state = init_chain(model, grid, obs, &cfg.init, rng)?;
                    run_chain(model, cfg, state)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Numerical("chain thread panicked".into()))))
            .collect()
    });
    let outputs = results.into_iter().collect::<Result<Vec<_>>>()?;
    summarize_chains(model, cfg, outputs)
}

fn summarize_chains(model: &Model, cfg: &SamplerConfig, outputs: Vec<ChainOutput>) -> Result<PosteriorSummary> {
    let moments = outputs
        .iter()
        .fold(Moments::new(model.state_len()), |acc, o| acc.merge(&o.moments));
    if moments.n == 0 {
        return Err(Error::Numerical("no draws retained".into()));
    }
    let chains: Vec<Vec<ParamDraw>> = outputs.into_iter().map(|o| o.draws).collect();
    let params = param_names(model.n_levels, model.coupled)
        .into_iter()
        .map(|(name, pick)| {
            let series: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|d| pick(&d.params)).collect()).collect();
            let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
            summarize(name, &refs)
        })
        .collect();
    let negative_means = moments.mean.iter().filter(|m| **m < 0.0).count();
    let diagnostics = Diagnostics {
        iterations: cfg.n_iter,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        chains: chains.len(),
        retained_per_chain: chains.first().map_or(0, Vec::len),
        params,
        negative_means,
    };
    Ok(PosteriorSummary {
        n_times: model.n_times,
        n_levels: model.n_levels,
        n_cells: model.n_cells,
        sd: moments.sd(),
        mean: moments.mean,
        chains,
        diagnostics,
    })
}

/// Builds the model from grid, winds and observations, then samples.
pub fn fit_bhm(grid: &Grid3D, winds: &WindField, obs: &ObservationSet, cfg: &BhmConfig, seed: u64) -> Result<PosteriorSummary> {
    cfg.validate()?;
    if winds.n_times != obs.n_times {
        return Err(Error::Dimension(format!(
            "winds cover {} times, observations {}",
            winds.n_times, obs.n_times
        )));
    }
    let props = PropagatorSet::build(grid, winds, cfg.advection_sign)?;
    let state_prior = StatePrior::from_observations(obs)?;
    let mut model = Model::new(props, obs, cfg.noise, cfg.priors.clone(), state_prior, cfg.coupled)?;
    model.mf_inner = cfg.sampler.mf_inner;
    run_gibbs(&model, grid, obs, &cfg.sampler, cfg.chains, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_merge_matches_single_pass() {
        let rows: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64, (i * i) as f64 * 0.5]).collect();
        let mut all = Moments::new(2);
        rows.iter().for_each(|r| all.push(r));
        let mut a = Moments::new(2);
        let mut b = Moments::new(2);
        rows[..4].iter().for_each(|r| a.push(r));
        rows[4..].iter().for_each(|r| b.push(r));
        let merged = a.merge(&b);
        assert_eq!(merged.n, all.n);
        for j in 0..2 {
            assert!((merged.mean[j] - all.mean[j]).abs() < 1e-12);
            assert!((merged.m2[j] - all.m2[j]).abs() < 1e-9);
        }
        assert_eq!(Moments::new(2).merge(&a), a);
    }
}
