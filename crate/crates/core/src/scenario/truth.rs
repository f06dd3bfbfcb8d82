//! Ground-truth tracer simulation.
//!
//! Physical-sign advection (`dX/dt = -u dX/dx - v dX/dy`) with a first-order
//! upwind scheme, sub-stepped so each sub-step's Courant sum stays below a
//! limit, plus conservative vertical exchange between adjacent levels and
//! small nonnegative-truncated noise. The simulated domain is the interior
//! plus its ghost ring; one further halo layer holds prescribed inflow.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::WindField;
use crate::error::{Error, Result};
use crate::grid::Grid3D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub lon: f64,
    pub lat: f64,
    pub sd_cells: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlumeSpec {
    pub blobs: Vec<Blob>,
    /// Multiplier on blob peaks per level, bottom to top.
    pub level_profile: Vec<f64>,
    /// Background mixing ratio per level, ppb.
    pub background: Vec<f64>,
}

impl Default for PlumeSpec {
    fn default() -> Self {
        PlumeSpec {
            blobs: vec![
                Blob {
                    lon: 236.5,
                    lat: 44.5,
                    sd_cells: 2.5,
                    peak: 60.0,
                },
                Blob {
                    lon: 244.0,
                    lat: 38.0,
                    sd_cells: 2.0,
                    peak: 45.0,
                },
            ],
            level_profile: vec![0.5, 0.7, 0.9, 1.0, 1.0],
            background: vec![70.0, 78.0, 86.0, 94.0, 102.0],
        }
    }
}

/// What flows in across the outer halo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InflowSpec {
    /// Halo holds the level background; otherwise zero.
    pub background_outside: bool,
    /// Peak of the time-varying western source, ppb (scaled by the level profile).
    pub west_peak: f64,
    pub period_hours: f64,
    pub lat_center: f64,
    pub lat_sd_deg: f64,
}

impl Default for InflowSpec {
    fn default() -> Self {
        InflowSpec {
            background_outside: true,
            west_peak: 50.0,
            period_hours: 30.0,
            lat_center: 41.0,
            lat_sd_deg: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthSpec {
    pub plume: PlumeSpec,
    pub inflow: InflowSpec,
    /// Steps simulated before the first recorded time.
    pub spinup_steps: usize,
    /// Per-step exchange fraction between adjacent levels.
    pub kappa: f64,
    /// Process noise sd per step, ppb.
    pub noise_sd: f64,
    pub max_courant: f64,
}

impl Default for TruthSpec {
    fn default() -> Self {
        TruthSpec {
            plume: PlumeSpec::default(),
            inflow: InflowSpec::default(),
            spinup_steps: 8,
            kappa: 0.05,
            noise_sd: 0.5,
            max_courant: 0.8,
        }
    }
}

impl TruthSpec {
    pub fn validate(&self, n_levels: usize) -> Result<()> {
        let p = &self.plume;
        if p.level_profile.len() != n_levels || p.background.len() != n_levels {
            return Err(Error::config("scenario.truth.plume", format!("profile and background need {n_levels} entries")));
        }
        if p.blobs.iter().any(|b| !(b.peak >= 0.0) || !(b.sd_cells > 0.0)) {
            return Err(Error::config("scenario.truth.plume.blobs", "peaks must be nonnegative and widths positive"));
        }
        if p.level_profile.iter().chain(&p.background).any(|v| !(*v >= 0.0)) {
            return Err(Error::config("scenario.truth.plume", "profile and background must be nonnegative"));
        }
        if !(0.0..=0.5).contains(&self.kappa) {
            return Err(Error::config("scenario.truth.kappa", format!("must lie in [0, 0.5], got {}", self.kappa)));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::config("scenario.truth.noise_sd", "must be nonnegative"));
        }
        if !(self.max_courant > 0.0 && self.max_courant <= 1.0) {
            return Err(Error::config("scenario.truth.max_courant", "must lie in (0, 1]"));
        }
        let inf = &self.inflow;
        if !(inf.west_peak >= 0.0) || !(inf.period_hours > 0.0) || !(inf.lat_sd_deg > 0.0) {
            return Err(Error::config("scenario.truth.inflow", "peak must be nonnegative, period and width positive"));
        }
        Ok(())
    }
}

/// True field over `(time, level, cell)` and on the ghost ring.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthField {
    pub n_times: usize,
    pub n_levels: usize,
    pub n_cells: usize,
    pub n_ghost: usize,
    pub x: Vec<f64>,
    pub xb: Vec<f64>,
}

impl TruthField {
    pub fn idx(&self, k: usize, l: usize, i: usize) -> usize {
        (k * self.n_levels + l) * self.n_cells + i
    }

    pub fn level_slice(&self, k: usize, l: usize) -> &[f64] {
        let s = self.idx(k, l, 0);
        &self.x[s..s + self.n_cells]
    }
}

/// Extended lattice: interior, ring, and one halo layer.
struct Extended<'a> {
    g: &'a Grid3D,
    w: usize,
    h: usize,
}

impl<'a> Extended<'a> {
    fn new(g: &'a Grid3D) -> Self {
        Extended { g, w: g.nx + 4, h: g.ny + 4 }
    }

    /// `(ix, iy)` in interior coordinates, `-2..=nx+1`.
    fn at(&self, ix: i64, iy: i64) -> usize {
        (iy + 2) as usize * self.w + (ix + 2) as usize
    }

    fn len(&self) -> usize {
        self.w * self.h
    }

    fn is_halo(&self, ix: i64, iy: i64) -> bool {
        ix == -2 || iy == -2 || ix == self.g.nx as i64 + 1 || iy == self.g.ny as i64 + 1
    }

    /// Simulated cells: interior plus ring.
    fn cells(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        let (nx, ny) = (self.g.nx as i64, self.g.ny as i64);
        (-1..=ny).flat_map(move |iy| (-1..=nx).map(move |ix| (ix, iy)))
    }

    fn halo(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        let (nx, ny) = (self.g.nx as i64, self.g.ny as i64);
        (-2..=ny + 1)
            .flat_map(move |iy| (-2..=nx + 1).map(move |ix| (ix, iy)))
            .filter(move |&(ix, iy)| self.is_halo(ix, iy))
    }

    /// Interior cell whose wind is used at `(ix, iy)`.
    fn wind_cell(&self, ix: i64, iy: i64) -> usize {
        let cx = ix.clamp(0, self.g.nx as i64 - 1) as usize;
        let cy = iy.clamp(0, self.g.ny as i64 - 1) as usize;
        cy * self.g.nx + cx
    }

    fn dx(&self, iy: i64) -> f64 {
        let s = &self.g.spec;
        s.earth_radius * self.g.lat(iy).to_radians().cos() * s.d_lon.to_radians()
    }

    fn dy(&self) -> f64 {
        let s = &self.g.spec;
        s.earth_radius * s.d_lat.to_radians()
    }
}

fn halo_value(g: &Grid3D, spec: &TruthSpec, l: usize, ix: i64, iy: i64, t_hours: f64) -> f64 {
    let inf = &spec.inflow;
    let mut v = if inf.background_outside { spec.plume.background[l] } else { 0.0 };
    if ix == -2 && inf.west_peak > 0.0 {
        let pulse = 0.5 + 0.5 * (std::f64::consts::TAU * t_hours / inf.period_hours).sin();
        let d = (g.lat(iy) - inf.lat_center) / inf.lat_sd_deg;
        v += inf.west_peak * spec.plume.level_profile[l] * pulse * (-0.5 * d * d).exp();
    }
    v
}

/// Upwind Courant sum `|u| dt / dx + |v| dt / dy`, maximized over the
/// simulated cells at time index `k`.
fn max_courant(ext: &Extended, w: &WindField, k: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for l in 0..w.n_levels {
        for (ix, iy) in ext.cells() {
            let (u, v) = w.at(k, l, ext.wind_cell(ix, iy));
            worst = worst.max(u.abs() * w.dt / ext.dx(iy) + v.abs() * w.dt / ext.dy());
        }
    }
    worst
}

pub fn simulate_truth<R: Rng + ?Sized>(g: &Grid3D, w: &WindField, spec: &TruthSpec, rng: &mut R) -> Result<TruthField> {
    let nl = g.n_levels();
    spec.validate(nl)?;
    if w.n_cells != g.n_cells() || w.n_levels != nl || w.n_times == 0 {
        return Err(Error::Dimension("wind field does not match grid".into()));
    }
    let ext = Extended::new(g);
    let dy = ext.dy();

    // initial condition: background plus Gaussian blobs
    let mut state: Vec<Vec<f64>> = (0..nl)
        .map(|l| {
            let mut field = vec![0.0; ext.len()];
            for iy in -2..=g.ny as i64 + 1 {
                for ix in -2..=g.nx as i64 + 1 {
                    let (lon, lat) = (g.lon(ix), g.lat(iy));
                    let plume: f64 = spec
                        .plume
                        .blobs
                        .iter()
                        .map(|b| {
                            let dxc = (lon - b.lon) / g.spec.d_lon;
                            let dyc = (lat - b.lat) / g.spec.d_lat;
                            b.peak * (-(dxc * dxc + dyc * dyc) / (2.0 * b.sd_cells * b.sd_cells)).exp()
                        })
                        .sum();
                    field[ext.at(ix, iy)] = spec.plume.background[l] + spec.plume.level_profile[l] * plume;
                }
            }
            field
        })
        .collect();

    let (t_rec, n, nb) = (w.n_times, g.n_cells(), g.n_ghost());
    let mut x = vec![0.0; t_rec * nl * n];
    let mut xb = vec![0.0; t_rec * nl * nb];
    let mut scratch = vec![0.0; ext.len()];
    let dt_hours = w.dt / 3600.0;
    let total = spec.spinup_steps + t_rec;

    for step in 0..total {
        // record before advancing; step index `spinup + k` is recorded time k
        if step >= spec.spinup_steps {
            let k = step - spec.spinup_steps;
            for (l, field) in state.iter().enumerate() {
                for i in 0..n {
                    let c = g.unflatten(i);
                    x[(k * nl + l) * n + i] = field[ext.at(c.ix as i64, c.iy as i64)];
                }
                for b in 0..nb {
                    let (gx, gy) = g.ghost_coords(b);
                    xb[(k * nl + l) * nb + b] = field[ext.at(gx, gy)];
                }
            }
            if k + 1 == t_rec {
                break;
            }
        }
        let kw = step.saturating_sub(spec.spinup_steps);
        let t0 = (step as f64 - spec.spinup_steps as f64) * dt_hours;
        let n_sub = (max_courant(&ext, w, kw) / spec.max_courant).ceil().max(1.0) as usize;
        let h = w.dt / n_sub as f64;
        for sub in 0..n_sub {
            let t = t0 + sub as f64 * h / 3600.0;
            for (l, field) in state.iter_mut().enumerate() {
                for (ix, iy) in ext.halo() {
                    field[ext.at(ix, iy)] = halo_value(g, spec, l, ix, iy, t);
                }
                scratch.copy_from_slice(field);
                for (ix, iy) in ext.cells() {
                    let (u, v) = w.at(kw, l, ext.wind_cell(ix, iy));
                    let c = field[ext.at(ix, iy)];
                    let grad_x = if u >= 0.0 {
                        c - field[ext.at(ix - 1, iy)]
                    } else {
                        field[ext.at(ix + 1, iy)] - c
                    };
                    let grad_y = if v >= 0.0 {
                        c - field[ext.at(ix, iy - 1)]
                    } else {
                        field[ext.at(ix, iy + 1)] - c
                    };
                    scratch[ext.at(ix, iy)] = c - h * (u * grad_x / ext.dx(iy) + v * grad_y / dy);
                }
                field.copy_from_slice(&scratch);
            }
        }
        if spec.kappa > 0.0 {
            for (ix, iy) in ext.cells() {
                let at = ext.at(ix, iy);
                let deltas: Vec<f64> = (0..nl - 1).map(|l| spec.kappa * (state[l + 1][at] - state[l][at])).collect();
                for (l, d) in deltas.into_iter().enumerate() {
                    state[l][at] += d;
                    state[l + 1][at] -= d;
                }
            }
        }
        if spec.noise_sd > 0.0 {
            for field in state.iter_mut() {
                for (ix, iy) in ext.cells() {
                    let z: f64 = StandardNormal.sample(rng);
                    let at = ext.at(ix, iy);
                    field[at] = (field[at] + spec.noise_sd * z).max(0.0);
                }
            }
        }
        if state.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("truth simulation diverged at step {step}")));
        }
    }
    for v in x.iter_mut().chain(xb.iter_mut()) {
        *v = v.max(0.0);
    }
    Ok(TruthField {
        n_times: t_rec,
        n_levels: nl,
        n_cells: n,
        n_ghost: nb,
        x,
        xb,
    })
}
