use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::clouds::CloudMask;
use super::truth::TruthField;
use crate::error::{Error, Result};
use crate::obs::{Observation, ObservationSet};

/// Noisy cloud-free observations: `y = x + e`, `e ~ N(0, (frac x)^2)`, with
/// recorded sd `max(frac x, floor)`.
pub fn observe<R: Rng + ?Sized>(truth: &TruthField, mask: &CloudMask, noise_frac: f64, sigma_floor: f64, rng: &mut R) -> Result<ObservationSet> {
    if !(noise_frac > 0.0) || !noise_frac.is_finite() {
        return Err(Error::config("scenario.noise_frac", format!("must be positive, got {noise_frac}")));
    }
    if !(sigma_floor > 0.0) || !sigma_floor.is_finite() {
        return Err(Error::config("scenario.sigma_floor", format!("must be positive, got {sigma_floor}")));
    }
    if mask.n_times != truth.n_times || mask.n_cells != truth.n_cells {
        return Err(Error::Dimension("cloud mask does not match truth".into()));
    }
    let mut records = Vec::with_capacity(truth.n_times * truth.n_levels);
    for k in 0..truth.n_times {
        for l in 0..truth.n_levels {
            let x = truth.level_slice(k, l);
            let level: Vec<Observation> = (0..truth.n_cells)
                .filter(|&i| !mask.is_cloudy(k, i))
                .map(|i| {
                    let sd = noise_frac * x[i];
                    let z: f64 = StandardNormal.sample(rng);
                    Observation {
                        cell: i,
                        value: x[i] + sd * z,
                        sigma: sd.max(sigma_floor),
                    }
                })
                .collect();
            records.push(level);
        }
    }
    ObservationSet::new(truth.n_times, truth.n_levels, truth.n_cells, records)
}
