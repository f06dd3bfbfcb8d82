//! Synthetic experiment: winds, ground truth, cloud masks, observations.

pub mod clouds;
pub mod observe;
pub mod truth;
pub mod winds;

use serde::{Deserialize, Serialize};

pub use clouds::{blob_footprint, synth_clouds, CloudMask, CloudSpec};
pub use observe::observe;
pub use truth::{simulate_truth, Blob, InflowSpec, PlumeSpec, TruthField, TruthSpec};
pub use winds::{synth_winds, WindSpec};

use crate::dynamics::WindField;
use crate::error::{Error, Result};
use crate::grid::Grid3D;
use crate::obs::ObservationSet;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_times: usize,
    pub dt_hours: f64,
    pub winds: WindSpec,
    pub truth: TruthSpec,
    pub clouds: CloudSpec,
    pub noise_frac: f64,
    pub sigma_floor: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_times: 32,
            dt_hours: 3.0,
            winds: WindSpec::default(),
            truth: TruthSpec::default(),
            clouds: CloudSpec::default(),
            noise_frac: 0.1,
            sigma_floor: 1.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, n_levels: usize) -> Result<()> {
        if self.n_times < 2 {
            return Err(Error::config("scenario.n_times", "need at least 2 time steps"));
        }
        if !(self.dt_hours > 0.0) || !self.dt_hours.is_finite() {
            return Err(Error::config("scenario.dt_hours", "must be positive"));
        }
        if !(self.noise_frac > 0.0) || !(self.sigma_floor > 0.0) {
            return Err(Error::config("scenario", "noise_frac and sigma_floor must be positive"));
        }
        self.winds.validate(n_levels)?;
        self.truth.validate(n_levels)?;
        self.clouds.validate()
    }

    pub fn dt_seconds(&self) -> f64 {
        self.dt_hours * 3600.0
    }
}

/// Everything the simulate stage produces.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub winds: WindField,
    pub truth: TruthField,
    pub mask: CloudMask,
}

pub fn simulate(g: &Grid3D, cfg: &ScenarioConfig, seed: u64) -> Result<Simulation> {
    cfg.validate(g.n_levels())?;
    let winds = synth_winds(g, &cfg.winds, cfg.n_times, cfg.dt_seconds(), &mut rng_for(seed, "winds"))?;
    let truth = simulate_truth(g, &winds, &cfg.truth, &mut rng_for(seed, "truth"))?;
    let mask = synth_clouds(g, &cfg.clouds, cfg.n_times, &mut rng_for(seed, "clouds"))?;
    Ok(Simulation { winds, truth, mask })
}

pub fn observe_seeded(sim: &Simulation, cfg: &ScenarioConfig, seed: u64) -> Result<ObservationSet> {
    observe(&sim.truth, &sim.mask, cfg.noise_frac, cfg.sigma_floor, &mut rng_for(seed, "noise"))
}
