use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::WindField;
use crate::error::{Error, Result};
use crate::grid::Grid3D;

/// Smooth zonal jet plus a traveling meander.
///
/// `u = U0(l) + a_u sin(2 pi (lat - lat0) / lambda + phi_k)` and
/// `v = a_v sin(2 pi (lon - lon0) / lambda + phi_k)`, where
/// `phi_k = phi0 + 2 pi t_k / period` and `phi0` is drawn from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindSpec {
    /// Base zonal speed per level, m/s, bottom to top.
    pub base_u: Vec<f64>,
    pub amp_u: f64,
    pub amp_v: f64,
    pub wavelength_deg: f64,
    pub period_hours: f64,
}

impl Default for WindSpec {
    fn default() -> Self {
        WindSpec {
            base_u: vec![5.0, 8.0, 11.0, 14.0, 17.0],
            amp_u: 3.0,
            amp_v: 3.0,
            wavelength_deg: 12.0,
            period_hours: 48.0,
        }
    }
}

impl WindSpec {
    pub fn validate(&self, n_levels: usize) -> Result<()> {
        if self.base_u.len() != n_levels {
            return Err(Error::config(
                "scenario.winds.base_u",
                format!("{} speeds for {n_levels} levels", self.base_u.len()),
            ));
        }
        let scalars = [self.amp_u, self.amp_v, self.wavelength_deg, self.period_hours];
        if self.base_u.iter().chain(scalars.iter()).any(|v| !v.is_finite()) {
            return Err(Error::config("scenario.winds", "all values must be finite"));
        }
        if !(self.wavelength_deg > 0.0) || !(self.period_hours > 0.0) {
            return Err(Error::config("scenario.winds", "wavelength and period must be positive"));
        }
        Ok(())
    }
}

pub fn synth_winds<R: Rng + ?Sized>(g: &Grid3D, spec: &WindSpec, n_times: usize, dt_s: f64, rng: &mut R) -> Result<WindField> {
    spec.validate(g.n_levels())?;
    let phase0 = rng.random_range(0.0..std::f64::consts::TAU);
    let (nl, n) = (g.n_levels(), g.n_cells());
    let mut u = Vec::with_capacity(n_times * nl * n);
    let mut v = Vec::with_capacity(n_times * nl * n);
    let tau = std::f64::consts::TAU;
    for k in 0..n_times {
        let phase = phase0 + tau * (k as f64 * dt_s / 3600.0) / spec.period_hours;
        for base in &spec.base_u {
            for i in 0..n {
                let c = g.unflatten(i);
                let lat = g.lat(c.iy as i64) - g.spec.lat_min;
                let lon = g.lon(c.ix as i64) - g.spec.lon_min;
                u.push(base + spec.amp_u * (tau * lat / spec.wavelength_deg + phase).sin());
                v.push(spec.amp_v * (tau * lon / spec.wavelength_deg + phase).sin());
            }
        }
    }
    WindField::new(n_times, nl, n, dt_s, u, v)
}
